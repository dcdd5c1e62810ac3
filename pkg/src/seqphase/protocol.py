"""The K-step sequential estimation engine.

Step 1 is a shot-noise limited primary readout plus a complementary readout
fixing the sign. Every later step applies ``n_i = floor(nu / sigma_{i-1})``
rotations, which splits the posterior into ``n_i`` candidate peaks; the one
compatible with the running estimate is kept and fused in.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .estimator import (
    MagnitudeEstimate,
    PhaseEstimate,
    SignClassification,
    classify_sign,
    combine_step,
    estimate_magnitude,
)
from .quantum_sim import Apparatus, EnsembleSpec, MeasurementRecord, TruePhase, effective_sigma
from .stats_core import (
    AlternativeSet,
    GaussianPeak,
    Tolerance,
    angle_mixture_from_szn,
    erf,
    g_of_beta,
    nu_factor,
    wrap_phase,
    wrapped_distance,
)

__all__ = [
    "Flag",
    "ProtocolParams",
    "ResourceLedger",
    "Selection",
    "StepRecord",
    "ProtocolTrace",
    "ScalingPrediction",
    "DegenerateRotationWarning",
    "next_n",
    "reduced_half_width",
    "alternative_weights",
    "select_alternative",
    "compatibility_probability",
    "detect_estimation_error",
    "run_protocol",
    "resource_scaling",
    "steps_for_precision",
]


class Flag(str, enum.Enum):
    AMBIGUOUS = "AMBIGUOUS"
    ESTIMATION_ERROR = "ESTIMATION_ERROR"
    HIGH_RISK_SIGN = "HIGH_RISK_SIGN"
    DEGENERATE = "DEGENERATE"
    NO_GAIN = "NO_GAIN"


class DegenerateRotationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ProtocolParams:
    tol: Tolerance
    max_steps: int = 2
    target_precision: float | None = None
    n_cap: int | None = None

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.n_cap is not None and self.n_cap < 1:
            raise ValueError("n_cap must be at least 1")
        if self.target_precision is not None and not self.target_precision > 0:
            raise ValueError("target_precision must be positive")


@dataclass(frozen=True)
class ResourceLedger:
    """Single-probe channel uses per step."""

    per_step: tuple[int, ...]
    include_complementary: bool = False

    @property
    def total(self) -> int:
        return sum(self.per_step)

    @classmethod
    def from_rotations(cls, ns, N, N_comp=None, include_complementary=False):
        per_probe = N + (N_comp if N_comp is not None and include_complementary else 0)
        return cls(tuple(per_probe * int(n) for n in ns), include_complementary)


@dataclass(frozen=True)
class Selection:
    k: int | None
    flags: frozenset
    weights: np.ndarray
    in_interval: np.ndarray
    half_width: float
    # runner-up weight share against the selected peak, over all peaks
    misclassification_ratio: float
    # same, restricted to peaks inside the reduced interval
    ambiguity_ratio: float


@dataclass
class StepRecord:
    n: int
    record: MeasurementRecord
    comp_record: MeasurementRecord
    magnitude: MagnitudeEstimate
    sign: SignClassification
    alternatives: AlternativeSet
    selected_k: int | None
    estimate: PhaseEstimate | None
    sigma_n: float
    flags: set = field(default_factory=set)


@dataclass
class ProtocolTrace:
    steps: list[StepRecord]
    resources: ResourceLedger
    params: ProtocolParams
    n_probes: int
    n_probes_comp: int

    @property
    def estimate(self) -> PhaseEstimate:
        """Last accepted estimate (the failing step, if any, contributes none)."""
        for step in reversed(self.steps):
            if step.estimate is not None:
                return step.estimate
        raise RuntimeError("trace has no estimate")

    @property
    def flags(self) -> set:
        out = set()
        for s in self.steps:
            out |= s.flags
        return out

    @property
    def estimation_error(self) -> bool:
        return Flag.ESTIMATION_ERROR in self.flags

    @property
    def rotations(self) -> list[int]:
        return [s.n for s in self.steps]

    @property
    def sigma_nominal(self) -> float:
        """Width of the last accepted n-fold peak (no fusion)."""
        for step in reversed(self.steps):
            if step.estimate is not None:
                return step.sigma_n
        raise RuntimeError("trace has no estimate")

    @property
    def beta_prime_max(self) -> float:
        return max(s.sign.beta_prime for s in self.steps)

    def ledger(self, include_complementary: bool = False) -> ResourceLedger:
        ns = [s.n for s in self.steps]
        return ResourceLedger.from_rotations(ns, self.n_probes, self.n_probes_comp, include_complementary)


@dataclass(frozen=True)
class ScalingPrediction:
    K: int
    rotations: tuple[float, ...]
    sigma_K: float
    delta_K: float
    R_K: float
    R_total: float
    K_std: float

    @property
    def heisenberg_exponent(self) -> float:
        return self.K / (self.K + 1)


def _next_n(sigma_prev: float, nu: float, n_cap: int | None) -> int:
    n = math.floor(nu / sigma_prev)
    if n_cap is not None:
        n = min(n, n_cap)
    return max(n, 1)


def next_n(sigma_prev: float, tol: Tolerance, n_cap: int | None = None, *, warn: bool = True) -> int:
    """Rotation count for the next step, ``min(floor(nu / sigma_prev), n_cap)``, at least 1."""
    if not sigma_prev > 0:
        raise ValueError("sigma_prev must be positive")
    n = _next_n(sigma_prev, nu_factor(tol), n_cap)
    if n == 1 and warn:
        warnings.warn("next step cannot narrow the estimate (n = 1)", DegenerateRotationWarning, stacklevel=2)
    return n


def reduced_half_width(sigma_prev: float, sigma_n: float, tol: Tolerance) -> float:
    return g_of_beta(tol.beta) * (sigma_prev - sigma_n)


def alternative_weights(center: float, sigma_prev: float, alts: AlternativeSet) -> np.ndarray:
    d = wrapped_distance(alts.centers, center)
    return np.exp(-(d * d) / (2.0 * (sigma_prev**2 + alts.sigma**2)))


def _pair_ratio(w_best, others):
    if others.size == 0:
        return 0.0
    w2 = float(others.max())
    return w2 / (w_best + w2)


def select_alternative(interval_center: float, sigma_prev: float, alts: AlternativeSet, tol: Tolerance) -> Selection:
    """Pick the candidate peak compatible with the running estimate.

    Candidates must sit within ``g (sigma_prev - sigma_n)`` of
    ``interval_center``; the heaviest of those wins. ``ESTIMATION_ERROR`` is
    raised in the flags when none qualifies, ``AMBIGUOUS`` when a second
    in-interval candidate carries more than ``beta_tilde`` of the pair weight.
    """
    if len(alts) == 0:
        raise ValueError("no alternatives")
    if not sigma_prev > alts.sigma:
        raise ValueError("previous width must exceed the candidate peak width")
    w = alternative_weights(interval_center, sigma_prev, alts)
    half = reduced_half_width(sigma_prev, alts.sigma, tol)
    d = wrapped_distance(alts.centers, interval_center)
    inside = d <= half * (1.0 + 1e-12)
    flags = set()
    if not inside.any():
        flags.add(Flag.ESTIMATION_ERROR)
        return Selection(None, frozenset(flags), w, inside, half, math.nan, math.nan)
    idx = np.flatnonzero(inside)
    k = int(idx[np.argmax(w[idx])])
    w_best = float(w[k])
    in_others = np.delete(w[idx], int(np.argmax(w[idx])))
    all_others = np.delete(w, k)
    amb = _pair_ratio(w_best, in_others)
    mis = _pair_ratio(w_best, all_others)
    if amb > tol.beta_tilde:
        flags.add(Flag.AMBIGUOUS)
    return Selection(k, frozenset(flags), w, inside, half, mis, amb)


def compatibility_probability(interval_center: float, sigma_prev: float, peak: GaussianPeak, tol: Tolerance) -> float:
    """Mass of the peak inside ``|phi - center| <= g sigma_prev`` (the integral compatibility test)."""
    g = g_of_beta(tol.beta)
    c = interval_center + wrap_phase(peak.center - interval_center)
    s = math.sqrt(2.0) * peak.sigma
    hi = (interval_center + g * sigma_prev - c) / s
    lo = (interval_center - g * sigma_prev - c) / s
    return 0.5 * (erf(hi) - erf(lo))


def detect_estimation_error(prev: PhaseEstimate, alts: AlternativeSet, tol: Tolerance, sigma_prev: float | None = None) -> bool:
    """True when no candidate peak lies in the reduced interval around ``prev``."""
    sp = prev.sigma if sigma_prev is None else sigma_prev
    half = reduced_half_width(sp, alts.sigma, tol)
    d = wrapped_distance(alts.centers, prev.phi_hat)
    return not bool((d <= half * (1.0 + 1e-12)).any())


def steps_for_precision(delta: float, N: int, tol: Tolerance) -> int:
    """Steps needed to reach half-width ``delta``: ``1 + ln(sigma_1 g / delta) / ln(nu sqrt(N))``."""
    g = g_of_beta(tol.beta)
    nu = nu_factor(tol)
    sigma1 = 1.0 / math.sqrt(N)
    ratio = sigma1 * g / delta
    if ratio <= 1.0:
        return 1
    return 1 + math.ceil(math.log(ratio) / math.log(nu * math.sqrt(N)) - 1e-12)


def _step_once(app, truth, n, spec, tol, interval=None):
    eps = spec.epsilon
    rec = app.sample_primary(truth, n)
    mag = estimate_magnitude(rec, eps)
    comp = app.sample_complementary(truth, n)
    sign = classify_sign(comp, mag.phi_tilde, spec.n_probes, spec.n_probes_comp, contrast=eps**n, beta_tilde=tol.beta_tilde)
    flags = set()
    if sign.high_risk:
        flags.add(Flag.HIGH_RISK_SIGN)
    if mag.degenerate:
        flags.add(Flag.DEGENERATE)
    return rec, mag, comp, sign, flags


def run_protocol(
    spec: EnsembleSpec,
    truth: TruePhase,
    params: ProtocolParams,
    *,
    substream: tuple = (),
    per_probe: bool = False,
    apparatus: Apparatus | None = None,
) -> ProtocolTrace:
    """Run up to ``params.max_steps`` steps against a hidden phase.

    The run stops early on an estimation error (no compatible candidate),
    when no further narrowing is possible, or once ``target_precision`` is
    reached. It never retries on its own.
    """
    tol = params.tol
    app = apparatus if apparatus is not None else Apparatus(spec, substream=substream, per_probe=per_probe)
    beta, beta_t = tol.beta, tol.beta_tilde
    g = g_of_beta(beta)
    nu = nu_factor(tol)
    eps = spec.epsilon

    rec, mag, comp, sign, flags = _step_once(app, truth, 1, spec, tol)
    phi1 = sign.alpha * mag.phi_tilde
    est = PhaseEstimate(wrap_phase(phi1), mag.sigma, 1, 1.0 - beta)
    alts = AlternativeSet(centers=[mag.phi_tilde, -mag.phi_tilde], sigma=mag.sigma)
    steps = [StepRecord(1, rec, comp, mag, sign, alts, 0 if sign.alpha == 1 else 1, est, mag.sigma, flags)]
    sigma_prev = mag.sigma

    for _ in range(2, params.max_steps + 1):
        if params.target_precision is not None and g * sigma_prev <= params.target_precision:
            break
        n = _next_n(sigma_prev, nu, params.n_cap)
        # with dephasing a large n can leave the peak wider than the prior
        if n == 1 or effective_sigma(spec.n_probes, n, eps) >= sigma_prev:
            steps[-1].flags.add(Flag.NO_GAIN)
            break
        rec, mag, comp, sign, flags = _step_once(app, truth, n, spec, tol)
        s = min(max(rec.s_z / eps**n, -1.0), 1.0)
        alts = angle_mixture_from_szn(s, n, spec.n_probes, sign=sign.alpha, sigma=mag.sigma)
        sel = select_alternative(est.phi_hat, sigma_prev, alts, tol)
        flags |= set(sel.flags)
        if sel.k is None:
            steps.append(StepRecord(n, rec, comp, mag, sign, alts, None, None, mag.sigma, flags))
            break
        peak = GaussianPeak(float(alts.centers[sel.k]), alts.sigma)
        est = combine_step(est, peak, beta_t)
        steps.append(StepRecord(n, rec, comp, mag, sign, alts, sel.k, est, mag.sigma, flags))
        sigma_prev = mag.sigma

    resources = ResourceLedger.from_rotations([st.n for st in steps], spec.n_probes, spec.n_probes_comp)
    return ProtocolTrace(steps, resources, params, spec.n_probes, spec.n_probes_comp)


def resource_scaling(params: ProtocolParams, N: int) -> ScalingPrediction:
    """Ideal (no floor) precision and resource count after ``params.max_steps`` steps.

    ``R_K = nu^(K-1) N^((K+1)/2)`` is the last-step cost, which dominates the
    total; ``delta_K R_K^(K/(K+1)) = g / nu^((K-1)/(K+1))`` holds exactly.
    ``K_std`` is the number of independent shot-noise repetitions that would
    reach the same ``delta_K``.
    """
    K = params.max_steps
    if K < 1:
        raise ValueError("K must be at least 1")
    g = g_of_beta(params.tol.beta)
    nu = nu_factor(params.tol)
    sigma1 = 1.0 / math.sqrt(N)
    rot = tuple((nu / sigma1) ** (i - 1) for i in range(1, K + 1))
    sigma_K = sigma1 * (sigma1 / nu) ** (K - 1)
    delta_K = g * sigma_K
    R = [N * r for r in rot]
    K_std = (g * sigma1 / delta_K) ** 2
    return ScalingPrediction(K, rot, sigma_K, delta_K, R[-1], sum(R), K_std)

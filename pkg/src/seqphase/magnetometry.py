"""Magnetic-field measurement on top of the phase protocol (CGS-Gaussian units).

A field ``B`` imprints the phase ``mu B tau_1 / hbar`` per primary Ramsey
time; the n-fold step simply waits ``n tau_1``. Fields above the 2 pi range
are brought back by subtracting an offset ``B0`` that imprints a whole number
of turns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .protocol import ProtocolParams, ProtocolTrace, run_protocol
from .quantum_sim import EnsembleSpec, TruePhase
from .stats_core import Tolerance, wrap_phase

__all__ = [
    "HBAR",
    "MU_BOHR",
    "FieldScenario",
    "FieldPlan",
    "FieldEstimate",
    "InfeasibleScenario",
    "EstimationError",
    "plan_scenario",
    "field_to_phase",
    "phase_to_field",
    "primary_field_precision",
    "coherence_field_bound",
    "run_field_measurement",
]

HBAR = 1.0546e-27  # erg s
MU_BOHR = 9.274e-21  # erg / G


class InfeasibleScenario(ValueError):
    """The prior field window spans more than one phase turn at ``tau1``."""

    def __init__(self, message, tau1_factor):
        super().__init__(message)
        self.tau1_factor = tau1_factor


class EstimationError(RuntimeError):
    """No candidate peak was compatible with the running estimate; rerun."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class FieldScenario:
    b_minus: float
    b_plus: float
    tau1: float
    tau_c: float
    N: int
    mu: float = MU_BOHR
    N_comp: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.b_minus < self.b_plus:
            raise ValueError("need 0 <= b_minus < b_plus")
        if not self.tau1 > 0:
            raise ValueError("tau1 must be positive")
        if self.tau_c < self.tau1:
            raise ValueError("tau_c must not be shorter than tau1")
        if self.N < 1:
            raise ValueError("N must be positive")

    @property
    def epsilon(self) -> float:
        return math.exp(-self.tau1 / self.tau_c)

    @property
    def phase_per_gauss(self) -> float:
        return self.mu * self.tau1 / HBAR


@dataclass(frozen=True)
class FieldPlan:
    params: ProtocolParams
    offset_b0: float
    turns: int
    epsilon: float
    steps_estimate: int


@dataclass(frozen=True)
class FieldEstimate:
    b_hat: float
    delta_b: float
    steps_used: int
    offset_b0: float
    trace: ProtocolTrace | None = None
    attempts: int = 1


def _steps_estimate(sc: FieldScenario) -> int:
    if sc.tau_c <= sc.tau1 or sc.N < 2:
        return 1
    k = 1.0 + math.log(sc.tau_c / sc.tau1) / math.log(math.sqrt(sc.N))
    return max(1, math.ceil(k - 1e-9))


def plan_scenario(sc: FieldScenario, tol: Tolerance, max_steps: int | None = None) -> FieldPlan:
    """Offset field, rotation cap and step count for a field scenario."""
    k = 2.0 * math.pi
    phi_minus = sc.b_minus * sc.phase_per_gauss
    phi_plus = sc.b_plus * sc.phase_per_gauss
    span = phi_plus - phi_minus
    if span > k:
        raise InfeasibleScenario(
            f"field window spans {span / k:.3f} phase turns; shorten tau1 by a factor {span / k:.3f}",
            tau1_factor=k / span,
        )
    turns = math.floor(phi_plus / k)
    b0 = turns * k / sc.phase_per_gauss
    if b0 > sc.b_plus:
        # guard against rounding in floor()
        turns -= 1
        b0 = turns * k / sc.phase_per_gauss
    n_cap = max(1, math.floor(sc.tau_c / sc.tau1 + 1e-9))
    k_est = _steps_estimate(sc)
    K = k_est if max_steps is None else min(max_steps, k_est)
    params = ProtocolParams(tol=tol, max_steps=K, n_cap=n_cap)
    return FieldPlan(params, b0, turns, sc.epsilon, k_est)


def field_to_phase(b: float, sc: FieldScenario, n: int = 1, offset_b0: float = 0.0) -> float:
    """Phase imprinted by field ``b`` after ``n`` primary Ramsey times, wrapped to ``(-pi, pi]``."""
    if n < 1:
        raise ValueError("n must be positive")
    return wrap_phase(n * (b - offset_b0) * sc.phase_per_gauss)


def phase_to_field(phi: float, sc: FieldScenario, offset_b0: float = 0.0) -> float:
    return offset_b0 + phi / sc.phase_per_gauss


def primary_field_precision(sc: FieldScenario) -> float:
    """Shot-noise field resolution of the primary step, ``hbar / (mu tau1 sqrt(N))``."""
    return HBAR / (sc.mu * sc.tau1 * math.sqrt(sc.N))


def coherence_field_bound(sc: FieldScenario) -> float:
    """Resolution of a single Ramsey sequence lasting the coherence time."""
    return HBAR / (sc.mu * sc.tau_c * math.sqrt(sc.N))


def _unwrap_into_window(phi, sc, b0):
    lo = (sc.b_minus - b0) * sc.phase_per_gauss
    hi = (sc.b_plus - b0) * sc.phase_per_gauss
    mid = 0.5 * (lo + hi)
    return mid + wrap_phase(phi - mid)


def run_field_measurement(
    sc: FieldScenario,
    hidden_b: float,
    tol: Tolerance,
    *,
    max_steps: int | None = None,
    seed: int = 0,
    substream: tuple = (),
    restarts: int = 0,
) -> FieldEstimate:
    """Estimate ``hidden_b`` with the sequential protocol.

    Raises :class:`EstimationError` if every attempt (``1 + restarts``)
    ends in an estimation error.
    """
    if not sc.b_minus <= hidden_b <= sc.b_plus:
        raise ValueError("hidden field lies outside the prior window")
    plan = plan_scenario(sc, tol, max_steps)
    spec = EnsembleSpec(sc.N, sc.N_comp, plan.epsilon, seed)
    truth = TruePhase(field_to_phase(hidden_b, sc, 1, plan.offset_b0))
    trace = None
    for attempt in range(restarts + 1):
        trace = run_protocol(spec, truth, plan.params, substream=(*substream, attempt))
        if not trace.estimation_error:
            break
    else:
        raise EstimationError("no compatible alternative; repeat the measurement", trace)
    est = trace.estimate
    phi = _unwrap_into_window(est.phi_hat, sc, plan.offset_b0)
    return FieldEstimate(
        b_hat=phase_to_field(phi, sc, plan.offset_b0),
        delta_b=est.sigma / sc.phase_per_gauss,
        steps_used=est.step_index,
        offset_b0=plan.offset_b0,
        trace=trace,
        attempts=attempt + 1,
    )

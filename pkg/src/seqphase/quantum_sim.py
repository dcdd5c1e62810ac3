"""Stochastic model of the collective Ramsey apparatus.

Each readout draws the number of probes found in the ``sigma_z = +1`` state.
Dephasing enters as a contrast factor ``epsilon ** n`` on the fringe, which is
exact for the ensemble statistics after averaging the single-probe density
matrix over a Gaussian random phase. A per-probe sampling mode is available
as an independent cross-check of that reduction.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .stats_core import wrap_phase

__all__ = [
    "Basis",
    "EnsembleSpec",
    "TruePhase",
    "MeasurementRecord",
    "Apparatus",
    "make_rng",
    "sample_primary",
    "sample_complementary",
    "effective_sigma",
    "coherence_cap",
]


class Basis(str, enum.Enum):
    PRIMARY_X = "primary_x"
    COMPLEMENTARY_Y = "complementary_y"


@dataclass(frozen=True)
class EnsembleSpec:
    """Probe counts, dephasing and seed for one simulated apparatus.

    ``epsilon`` is the coherence factor per unit exposure, ``exp(-Gamma tau_1 / 2)``.
    """

    n_probes: int
    n_probes_comp: int | None = None
    epsilon: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_probes_comp is None:
            object.__setattr__(self, "n_probes_comp", self.n_probes)
        if self.n_probes < 1 or self.n_probes_comp < 1:
            raise ValueError("probe counts must be positive")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon!r}")


@dataclass(frozen=True)
class TruePhase:
    phi: float

    def __post_init__(self):
        object.__setattr__(self, "phi", wrap_phase(float(self.phi)))


@dataclass(frozen=True)
class MeasurementRecord:
    n_plus: int
    n_minus: int
    n_fold: int = 1
    basis: Basis = Basis.PRIMARY_X

    @property
    def n_total(self) -> int:
        return self.n_plus + self.n_minus

    @property
    def s_z(self) -> float:
        return (self.n_plus - self.n_minus) / self.n_total


def make_rng(seed: int, *substream: int) -> np.random.Generator:
    """Counter-based generator; ``substream`` indices give independent streams."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(s) for s in substream))
    return np.random.Generator(np.random.Philox(ss))


def _draw(rng, n_probes, contrast, phase, per_probe_noise):
    if per_probe_noise is None:
        q = 0.5 * (1.0 + contrast * math.cos(phase))
        q = min(max(q, 0.0), 1.0)
        return int(rng.binomial(n_probes, q))
    phases = phase + rng.normal(0.0, per_probe_noise, size=n_probes)
    q = 0.5 * (1.0 + np.cos(phases))
    return int((rng.random(n_probes) < q).sum())


@dataclass
class Apparatus:
    """Owns one RNG stream; not safe for concurrent use.

    With ``per_probe=True`` every probe receives its own Gaussian phase kick
    whose variance reproduces the ``epsilon ** n`` contrast on average.
    """

    spec: EnsembleSpec
    substream: tuple = ()
    per_probe: bool = False
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.rng = make_rng(self.spec.seed, *self.substream)

    def _noise(self, n):
        if not self.per_probe:
            return None
        # <cos(x)> = exp(-s^2/2) = epsilon^n
        return math.sqrt(-2.0 * n * math.log(self.spec.epsilon))

    def sample_primary(self, truth: TruePhase, n: int = 1, n_probes: int | None = None) -> MeasurementRecord:
        if n < 1:
            raise ValueError("n must be positive")
        size = self.spec.n_probes if n_probes is None else n_probes
        contrast = self.spec.epsilon**n
        n_plus = _draw(self.rng, size, contrast, n * truth.phi, self._noise(n))
        return MeasurementRecord(n_plus, size - n_plus, n, Basis.PRIMARY_X)

    def sample_complementary(self, truth: TruePhase, n: int = 1, n_probes: int | None = None) -> MeasurementRecord:
        if n < 1:
            raise ValueError("n must be positive")
        size = self.spec.n_probes_comp if n_probes is None else n_probes
        contrast = self.spec.epsilon**n
        # sigma_y preparation turns the fringe into sin(n phi) = cos(n phi - pi/2)
        n_plus = _draw(self.rng, size, contrast, n * truth.phi - 0.5 * math.pi, self._noise(n))
        return MeasurementRecord(n_plus, size - n_plus, n, Basis.COMPLEMENTARY_Y)


def sample_primary(spec: EnsembleSpec, truth: TruePhase, n: int = 1, rng: np.random.Generator | None = None) -> MeasurementRecord:
    """One-shot primary readout; pass ``rng`` to continue an existing stream."""
    rng = make_rng(spec.seed) if rng is None else rng
    n_plus = _draw(rng, spec.n_probes, spec.epsilon**n, n * truth.phi, None)
    return MeasurementRecord(n_plus, spec.n_probes - n_plus, n, Basis.PRIMARY_X)


def sample_complementary(spec: EnsembleSpec, truth: TruePhase, n: int = 1, rng: np.random.Generator | None = None) -> MeasurementRecord:
    rng = make_rng(spec.seed) if rng is None else rng
    n_plus = _draw(rng, spec.n_probes_comp, spec.epsilon**n, n * truth.phi - 0.5 * math.pi, None)
    return MeasurementRecord(n_plus, spec.n_probes_comp - n_plus, n, Basis.COMPLEMENTARY_Y)


def effective_sigma(N: int, n: int, epsilon: float = 1.0) -> float:
    """Peak width of the angle posterior after an n-fold readout with dephasing."""
    if N < 1 or n < 1:
        raise ValueError("N and n must be positive")
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1]")
    # epsilon**n underflows for huge n; work in logs
    return math.exp(-0.5 * math.log(N) - math.log(n) - n * math.log(epsilon))


def coherence_cap(epsilon: float) -> float:
    """Rotation count ``-1 / ln(epsilon)`` minimising :func:`effective_sigma` (inf without dephasing)."""
    if epsilon >= 1.0:
        return math.inf
    return -1.0 / math.log(epsilon)

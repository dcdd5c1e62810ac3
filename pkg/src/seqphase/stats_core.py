"""Deterministic statistics for ensemble phase estimation.

Error function and its inverse on the two-sided normal tail, the posterior
for ``p = cos(phi)`` after a collective Ramsey readout, the n-peak angle
mixture, the optimal rotation factor ``nu`` and the entropy of a wrapped
Gaussian mixture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

__all__ = [
    "GAUSSIAN_MIN_COUNT",
    "Tolerance",
    "GaussianPeak",
    "PosteriorP",
    "AlternativeSet",
    "erf",
    "g_of_beta",
    "wrap_phase",
    "wrapped_distance",
    "posterior_p",
    "angle_mixture_from_szn",
    "nu_factor",
    "nu_asymptotic",
    "mixture_density",
    "shannon_entropy",
    "adaptive_simpson",
]

# Counts below this make the Gaussian surrogate of the Beta posterior unreliable.
GAUSSIAN_MIN_COUNT = 5

_STD_NORMAL = NormalDist()


@dataclass(frozen=True)
class Tolerance:
    """Estimation tolerance ``beta`` and classification tolerance ``beta_tilde``."""

    beta: float
    beta_tilde: float

    def __post_init__(self):
        for name in ("beta", "beta_tilde"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v!r}")

    @property
    def g(self) -> float:
        return g_of_beta(self.beta)


@dataclass(frozen=True)
class GaussianPeak:
    center: float
    sigma: float
    weight: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma!r}")
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")


@dataclass(frozen=True)
class PosteriorP:
    """Posterior of ``p = cos(phi)`` given ``n_plus`` up and ``n_minus`` down counts.

    The exact density is Beta(n_plus + 1, n_minus + 1) in ``(1 + p) / 2``;
    ``s_z`` and ``sigma`` describe its Gaussian surrogate.
    """

    n_plus: int
    n_minus: int
    s_z: float
    sigma: float
    degenerate: bool = False
    unreliable: bool = False

    @property
    def n_total(self) -> int:
        return self.n_plus + self.n_minus

    def log_density(self, p):
        """Exact log posterior density on ``p`` in ``[-1, 1]``."""
        p = np.asarray(p, dtype=float)
        a, b = self.n_plus, self.n_minus
        log_norm = math.lgamma(a + b + 2) - math.lgamma(a + 1) - math.lgamma(b + 1) - math.log(2.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            up = np.where(a > 0, a * np.log((1.0 + p) / 2.0), 0.0)
            down = np.where(b > 0, b * np.log((1.0 - p) / 2.0), 0.0)
        out = log_norm + up + down
        return np.where(np.abs(p) <= 1.0, out, -np.inf)

    def density(self, p):
        return np.exp(self.log_density(p))

    def gaussian_density(self, p):
        p = np.asarray(p, dtype=float)
        if self.sigma == 0:
            raise ValueError("Gaussian surrogate is degenerate (sigma = 0)")
        z = (p - self.s_z) / self.sigma
        return np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * self.sigma)


@dataclass(frozen=True)
class AlternativeSet:
    """Candidate peak positions after an n-fold rotation.

    ``centers`` holds the peaks in canonical range; all share ``sigma``.
    """

    centers: np.ndarray
    sigma: float
    weights: np.ndarray = field(default=None)
    n_fold: int = 1

    def __post_init__(self):
        centers = np.atleast_1d(np.asarray(self.centers, dtype=float))
        object.__setattr__(self, "centers", centers)
        if self.weights is None:
            w = np.full(centers.shape, 1.0 / centers.size)
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != centers.shape:
                raise ValueError("weights and centers must have the same shape")
            w = w / w.sum()
        object.__setattr__(self, "weights", w)
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def __len__(self):
        return self.centers.size

    def peaks(self) -> list[GaussianPeak]:
        return [GaussianPeak(float(c), self.sigma, float(w)) for c, w in zip(self.centers, self.weights)]

    def min_separation(self) -> float:
        """Smallest wrapped distance between two peak centers (inf for one peak)."""
        if self.centers.size < 2:
            return math.inf
        c = np.sort(self.centers)
        gaps = np.diff(np.concatenate([c, [c[0] + 2 * math.pi]]))
        return float(gaps.min())


def erf(x: float) -> float:
    """Error function, ``(1/sqrt(pi)) * int_{-x}^{x} exp(-t^2) dt``."""
    return math.erf(x)


def g_of_beta(beta: float) -> float:
    """Half-width in standard deviations of the two-sided ``1 - beta`` interval.

    Solves ``1 - beta = erf(g / sqrt(2))``.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta!r}")
    return -_STD_NORMAL.inv_cdf(beta / 2.0)


def wrap_phase(phi):
    """Reduce phases to the half-open range ``(-pi, pi]``."""
    two_pi = 2.0 * math.pi
    if np.ndim(phi) == 0:
        r = math.fmod(float(phi), two_pi)
        if r <= -math.pi:
            r += two_pi
        elif r > math.pi:
            r -= two_pi
        return r
    r = np.fmod(np.asarray(phi, dtype=float), two_pi)
    r = np.where(r <= -math.pi, r + two_pi, r)
    return np.where(r > math.pi, r - two_pi, r)


def wrapped_distance(a, b):
    """Minor-arc distance between phases ``a`` and ``b``."""
    return np.abs(wrap_phase(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def posterior_p(n_plus: int, n_minus: int) -> PosteriorP:
    """Posterior for ``p = cos(phi)`` after observing the given counts."""
    if n_plus < 0 or n_minus < 0:
        raise ValueError("counts must be nonnegative")
    n = n_plus + n_minus
    if n == 0:
        raise ValueError("at least one probe must be observed")
    s_z = (n_plus - n_minus) / n
    var = max(1.0 - s_z * s_z, 0.0) / n
    sigma = math.sqrt(var)
    return PosteriorP(
        n_plus=n_plus,
        n_minus=n_minus,
        s_z=s_z,
        sigma=sigma,
        degenerate=sigma == 0.0,
        unreliable=min(n_plus, n_minus) < GAUSSIAN_MIN_COUNT,
    )


def angle_mixture_from_szn(s_zn: float, n: int, N: int, *, sign: int = 1, sigma: float | None = None) -> AlternativeSet:
    """The n equiprobable peaks of the angle posterior after an n-fold readout.

    ``sign`` selects the branch of ``arccos`` for ``n * phi`` (as decided by
    the complementary readout). ``sigma`` overrides the default peak width
    ``1 / (n sqrt(N))``, e.g. to include dephasing.
    """
    if abs(s_zn) > 1.0:
        raise ValueError(f"|s_zn| must not exceed 1, got {s_zn!r}")
    if n < 1 or N < 1:
        raise ValueError("n and N must be positive")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    phi_n = sign * abs(math.acos(s_zn))
    k = np.arange(n)
    centers = wrap_phase(phi_n / n + 2.0 * math.pi * k / n)
    width = 1.0 / (n * math.sqrt(N)) if sigma is None else sigma
    return AlternativeSet(centers=centers, sigma=width, n_fold=n)


def _log_odds(beta_tilde: float) -> float:
    return math.log((1.0 - beta_tilde) / beta_tilde)


def nu_factor(tol: Tolerance) -> float:
    """Largest rotation factor ``nu`` keeping the alternative mix-up below ``beta_tilde``.

    The next step may use up to ``floor(nu / sigma)`` rotations.
    """
    if tol.beta_tilde >= 0.5:
        raise ValueError("beta_tilde must be below 1/2")
    g = g_of_beta(tol.beta)
    L = _log_odds(tol.beta_tilde)
    # sqrt(1 + x) - 1 written to avoid cancellation when L << g^2
    x = 2.0 * L / (g * g)
    root_minus_one = x / (math.sqrt(1.0 + x) + 1.0)
    return math.pi * g * root_minus_one / L


def nu_asymptotic(tol: Tolerance) -> float:
    """Small-tolerance form of :func:`nu_factor`."""
    lb = math.log(tol.beta)
    lbt = math.log(tol.beta_tilde)
    return math.pi * math.sqrt(2.0 * abs(lb)) / abs(lbt) * (math.sqrt(1.0 + lbt / lb) - 1.0)


def mixture_density(phi, mix: AlternativeSet, images: int = 1):
    """Density of the wrapped Gaussian mixture on the circle."""
    phi = np.asarray(phi, dtype=float)
    out = np.zeros(np.shape(phi))
    norm = 1.0 / (math.sqrt(2.0 * math.pi) * mix.sigma)
    for shift in range(-images, images + 1):
        d = phi[..., None] - mix.centers - 2.0 * math.pi * shift
        out = out + (mix.weights * np.exp(-0.5 * (d / mix.sigma) ** 2)).sum(axis=-1) * norm
    return out


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-8, max_depth: int = 50) -> float:
    """Adaptive Simpson quadrature of scalar ``f`` over ``[a, b]``."""

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        return recurse(a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + recurse(
            m, b, fm, frm, fb, right, tol / 2.0, depth - 1
        )

    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)


def shannon_entropy(mix: AlternativeSet, tol: float = 1e-8) -> tuple[float, bool]:
    """Differential entropy of the mixture over ``(-pi, pi]``.

    Returns ``(H, overlapping)``; ``overlapping`` is set when two peaks sit
    closer than six widths, where the entropy is no longer the sum of
    separate peak contributions.
    """
    overlapping = mix.min_separation() <= 6.0 * mix.sigma

    def integrand(x):
        p = float(mixture_density(x, mix))
        return -p * math.log(p) if p > 0.0 else 0.0

    # Break the circle at +-10 sigma around each peak so no peak is stepped over.
    pts = {-math.pi, math.pi}
    for c in mix.centers:
        for off in (-10.0, -3.0, 0.0, 3.0, 10.0):
            x = float(c) + off * mix.sigma
            if -math.pi < x < math.pi:
                pts.add(x)
            elif x <= -math.pi and x + 2 * math.pi < math.pi:
                pts.add(x + 2 * math.pi)
            elif x >= math.pi and x - 2 * math.pi > -math.pi:
                pts.add(x - 2 * math.pi)
    grid = sorted(pts)
    seg_tol = tol / max(len(grid) - 1, 1)
    total = 0.0
    for lo, hi in zip(grid[:-1], grid[1:]):
        if hi - lo > 0:
            total += adaptive_simpson(integrand, lo, hi, seg_tol)
    return total, overlapping

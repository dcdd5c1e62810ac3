"""From readout records to phase estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .quantum_sim import Basis, MeasurementRecord, effective_sigma
from .stats_core import GaussianPeak, erf, wrap_phase

__all__ = [
    "MagnitudeEstimate",
    "SignClassification",
    "PhaseEstimate",
    "estimate_magnitude",
    "classify_sign",
    "predicted_misclassification",
    "combine_step",
    "fuse",
]


@dataclass(frozen=True)
class MagnitudeEstimate:
    phi_tilde: float  # |arccos| of the (contrast-corrected) polarization, in [0, pi]
    sigma: float
    degenerate: bool = False


@dataclass(frozen=True)
class SignClassification:
    alpha: int
    boundary: float
    beta_prime: float
    high_risk: bool = False
    s_plus: float = 0.0
    s_minus: float = 0.0
    sigma_comp: float = 0.0


@dataclass(frozen=True)
class PhaseEstimate:
    phi_hat: float
    sigma: float
    step_index: int = 1
    confidence: float = 1.0


def estimate_magnitude(rec: MeasurementRecord, epsilon: float = 1.0) -> MagnitudeEstimate:
    """Magnitude of ``n * phi`` from a primary record.

    The returned width refers to ``phi`` itself, ``1 / (n eps^n sqrt(N))``.
    """
    if rec.basis is not Basis.PRIMARY_X:
        raise ValueError("magnitude estimate needs a primary-basis record")
    contrast = epsilon**rec.n_fold
    s = rec.s_z / contrast
    s = min(max(s, -1.0), 1.0)
    degenerate = abs(s) >= 1.0
    return MagnitudeEstimate(
        phi_tilde=abs(math.acos(s)),
        sigma=effective_sigma(rec.n_total, rec.n_fold, epsilon),
        degenerate=degenerate,
    )


def predicted_misclassification(phi_tilde: float, N_comp: int, contrast: float = 1.0) -> float:
    """Probability of picking the wrong sign for a given magnitude estimate."""
    sin_p = abs(math.sin(phi_tilde))
    var = (1.0 - (contrast * math.sin(phi_tilde)) ** 2) / N_comp
    if var <= 0.0:
        return 0.0
    # erfc keeps the tiny tail that 1 - erf rounds to zero
    return 0.5 * math.erfc(contrast * sin_p / (math.sqrt(2.0) * math.sqrt(var)))


def classify_sign(
    comp_rec: MeasurementRecord,
    phi_tilde: float,
    N: int,
    N_comp: int | None = None,
    *,
    contrast: float = 1.0,
    beta_tilde: float | None = None,
) -> SignClassification:
    """Decide the sign of the angle from the complementary readout.

    The two hypotheses predict polarizations ``c(+-sin(phi) - sin^2(phi)/2N)``
    with spread ``sqrt(1 - c^2 sin^2(phi)) / sqrt(N')``; ``c = 1`` gives the
    undamped case where the spread is ``|cos(phi)| / sqrt(N')``. Ties go to +1.
    """
    if not 0.0 <= phi_tilde <= math.pi:
        raise ValueError(f"phi_tilde must lie in [0, pi], got {phi_tilde!r}")
    if comp_rec.basis is not Basis.COMPLEMENTARY_Y:
        raise ValueError("sign classification needs a complementary-basis record")
    N_comp = comp_rec.n_total if N_comp is None else N_comp
    sin_p = math.sin(phi_tilde)
    bias = sin_p * sin_p / (2.0 * N)
    s_plus = contrast * (sin_p - bias)
    s_minus = contrast * (-sin_p - bias)
    boundary = 0.5 * (s_plus + s_minus)
    var = (1.0 - (contrast * sin_p) ** 2) / N_comp
    beta_prime = predicted_misclassification(phi_tilde, N_comp, contrast)
    alpha = 1 if comp_rec.s_z >= boundary else -1
    high_risk = beta_tilde is not None and beta_prime > beta_tilde
    return SignClassification(
        alpha=alpha,
        boundary=boundary,
        beta_prime=beta_prime,
        high_risk=high_risk,
        s_plus=s_plus,
        s_minus=s_minus,
        sigma_comp=math.sqrt(max(var, 0.0)),
    )


def fuse(center_a: float, sigma_a: float, center_b: float, sigma_b: float) -> tuple[float, float]:
    """Precision-weighted product of two Gaussians on the line."""
    va, vb = sigma_a * sigma_a, sigma_b * sigma_b
    center = (center_a * vb + center_b * va) / (va + vb)
    return center, sigma_a * sigma_b / math.sqrt(va + vb)


def combine_step(prev: PhaseEstimate, selected_peak: GaussianPeak, beta_tilde: float = 0.0) -> PhaseEstimate:
    """Fuse the running estimate with the selected n-fold peak.

    The peak is unwrapped to the image nearest ``prev`` before fusing.
    """
    nearest = prev.phi_hat + wrap_phase(selected_peak.center - prev.phi_hat)
    center, sigma = fuse(prev.phi_hat, prev.sigma, nearest, selected_peak.sigma)
    return replace(
        prev,
        phi_hat=wrap_phase(center),
        sigma=sigma,
        step_index=prev.step_index + 1,
        confidence=prev.confidence * (1.0 - beta_tilde),
    )

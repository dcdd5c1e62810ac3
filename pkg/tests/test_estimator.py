import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seqphase.estimator import (
    PhaseEstimate,
    classify_sign,
    combine_step,
    estimate_magnitude,
    fuse,
    predicted_misclassification,
)
from seqphase.quantum_sim import Apparatus, Basis, EnsembleSpec, MeasurementRecord, TruePhase
from seqphase.stats_core import GaussianPeak, g_of_beta, wrapped_distance


def prim(n_plus, N, n=1):
    return MeasurementRecord(n_plus, N - n_plus, n, Basis.PRIMARY_X)


def comp(n_plus, N):
    return MeasurementRecord(n_plus, N - n_plus, 1, Basis.COMPLEMENTARY_Y)


class TestMagnitude:
    def test_all_up(self):
        m = estimate_magnitude(prim(1000, 1000))
        assert m.phi_tilde == 0.0 and m.degenerate

    def test_balanced(self):
        m = estimate_magnitude(prim(500, 1000))
        assert m.phi_tilde == pytest.approx(math.pi / 2)
        assert m.sigma == pytest.approx(1 / math.sqrt(1000))

    def test_n_fold_width(self):
        assert estimate_magnitude(prim(700, 1000, n=30)).sigma == pytest.approx(1 / (30 * math.sqrt(1000)))

    def test_contrast_correction_clips(self):
        # s = 0.96 with contrast 0.9**2 would exceed 1 after correction
        m = estimate_magnitude(prim(980, 1000, n=2), epsilon=0.9)
        assert m.phi_tilde == 0.0 and m.degenerate

    def test_rejects_complementary(self):
        with pytest.raises(ValueError):
            estimate_magnitude(comp(10, 20))


class TestSign:
    def test_clear_positive(self):
        c = classify_sign(comp(900, 1000), 1.0, 1000)
        assert c.alpha == 1
        assert c.s_plus == pytest.approx(math.sin(1.0) - math.sin(1.0) ** 2 / 2000)

    def test_clear_negative(self):
        assert classify_sign(comp(100, 1000), 1.0, 1000).alpha == -1

    def test_tie_goes_positive(self):
        # boundary is -sin^2/(2N); s_z exactly on it must give +1
        N = 4
        phi = math.pi / 2
        c = classify_sign(MeasurementRecord(2, 2, 1, Basis.COMPLEMENTARY_Y), phi, N)
        assert c.boundary == pytest.approx(-1 / 8)
        assert c.alpha == 1

    def test_boundary_value(self):
        c = classify_sign(comp(500, 1000), 0.7, 1000)
        assert c.boundary == pytest.approx(-math.sin(0.7) ** 2 / 2000)

    def test_high_risk_flag(self):
        c = classify_sign(comp(500, 1000), 1e-3, 1000, beta_tilde=0.01)
        assert c.high_risk and c.beta_prime > 0.4

    def test_domain(self):
        with pytest.raises(ValueError):
            classify_sign(comp(5, 10), -0.1, 10)
        with pytest.raises(ValueError):
            classify_sign(prim(5, 10), 0.1, 10)


@pytest.mark.parametrize("phi,N", [(0.05, 1000), (0.1, 400), (0.03, 2000)])
def test_misclassification_rate_matches_prediction(phi, N):
    """Monte Carlo rate of wrong signs vs the Gaussian prediction at the true magnitude."""
    T = 40_000
    app = Apparatus(EnsembleSpec(N, seed=int(phi * 1e4) + N))
    wrong = 0
    for _ in range(T):
        c = classify_sign(app.sample_complementary(TruePhase(phi)), phi, N)
        wrong += c.alpha != 1
    pred = predicted_misclassification(phi, N)
    assert pred * T >= 50
    rate = wrong / T
    # lattice effects of the discrete count bias the rate; allow 5 sigma plus 15 %
    assert abs(rate - pred) <= 5 * math.sqrt(pred * (1 - pred) / T) + 0.15 * pred


def test_misclassification_odd_count_exact():
    """With odd N' there is no tie; the exact binomial error probability is computable."""
    from scipy import stats

    phi, N = 0.08, 401
    c = classify_sign(comp(0, N), phi, N)
    q = (1 + math.sin(phi)) / 2
    # s_z = (2k - N)/N < boundary  <=>  k < N (1 + boundary) / 2
    k_max = math.ceil(N * (1 + c.boundary) / 2) - 1
    exact = stats.binom.cdf(k_max, N, q)
    T = 40_000
    app = Apparatus(EnsembleSpec(N, seed=3))
    wrong = sum(classify_sign(app.sample_complementary(TruePhase(phi)), phi, N).alpha != 1 for _ in range(T))
    assert abs(wrong / T - exact) <= 5 * math.sqrt(exact * (1 - exact) / T)
    assert exact == pytest.approx(c.beta_prime, rel=0.3)


def test_predicted_misclassification_tail():
    assert 0 < predicted_misclassification(1.0, 10**6) < 1e-300 or predicted_misclassification(1.0, 10**6) == 0
    assert predicted_misclassification(0.3, 1000) > 0
    assert predicted_misclassification(math.pi / 2, 1000) == 0.0


def test_magnitude_interval_coverage():
    """arccos estimate +- g sigma covers the true angle about 1 - beta of the time."""
    beta, N, phi, T = 0.05, 1000, 1.1, 20_000
    g = g_of_beta(beta)
    app = Apparatus(EnsembleSpec(N, seed=17))
    hits = 0
    for _ in range(T):
        m = estimate_magnitude(app.sample_primary(TruePhase(phi)))
        hits += abs(m.phi_tilde - phi) <= g * m.sigma
    cov = hits / T
    assert abs(cov - (1 - beta)) <= 5 * math.sqrt(beta * (1 - beta) / T) + 0.005


class TestCombine:
    def test_worked_example(self):
        out = combine_step(PhaseEstimate(0.5, 0.03), GaussianPeak(0.51, 0.001), beta_tilde=0.01)
        assert out.phi_hat == pytest.approx(0.509989, abs=1e-6)
        assert out.sigma == pytest.approx(0.00099944, rel=1e-4)
        assert out.step_index == 2
        assert out.confidence == pytest.approx(0.99)

    def test_unwraps_across_branch_cut(self):
        out = combine_step(PhaseEstimate(math.pi - 0.01, 0.05), GaussianPeak(-math.pi + 0.01, 0.05))
        assert wrapped_distance(out.phi_hat, math.pi) < 1e-12

    @given(
        st.floats(-3, 3),
        st.floats(1e-4, 1.0),
        st.floats(-3, 3),
        st.floats(1e-4, 1.0),
    )
    def test_fusion_properties(self, a, sa, b, sb):
        c, s = fuse(a, sa, b, sb)
        assert s <= min(sa, sb) * (1 + 1e-12)
        assert min(a, b) - 1e-9 <= c <= max(a, b) + 1e-9
        assert 1 / s**2 == pytest.approx(1 / sa**2 + 1 / sb**2, rel=1e-9)

    @given(st.floats(1e-3, 0.3), st.floats(1.5, 100))
    def test_fused_width_bound(self, s_prev, r):
        # peak r times narrower: fused width within a factor (1 + 1/r^2)^-1/2 of the peak
        s_new = s_prev / r
        _, s = fuse(0.0, s_prev, 0.0, s_new)
        assert s_new / math.sqrt(1 + 1 / r**2) == pytest.approx(s, rel=1e-12)


def test_sign_symmetry_paired_seeds():
    """Mirrored phases with mirrored counts give mirrored signs when N' is odd."""
    N, phi = 101, 0.4
    rng = np.random.default_rng(0)
    for _ in range(200):
        k = int(rng.integers(0, N + 1))
        a = classify_sign(comp(k, N), phi, N)
        b = classify_sign(comp(N - k, N), phi, N)
        s = (2 * k - N) / N
        # counts symmetric about the biased boundary only differ in the tie region
        if abs(s) > 2 * abs(a.boundary):
            assert a.alpha == -b.alpha


def _exact_wald_coverage(phi, N, beta):
    from scipy import stats

    g = g_of_beta(beta)
    p = math.cos(phi)
    k = np.arange(N + 1)
    s = (2 * k - N) / N
    sig = np.sqrt(np.maximum(1 - s * s, 0.0) / N)
    return float(stats.binom.pmf(k, N, (1 + p) / 2)[np.abs(p - s) <= g * sig].sum())


def test_primary_interval_undercovers_near_edges():
    """The plug-in width sqrt(1 - S_z^2)/sqrt(N) loses coverage as |cos phi| -> 1."""
    mid = _exact_wald_coverage(math.pi / 2, 1000, 0.01)
    edge = _exact_wald_coverage(0.35, 1000, 0.01)
    assert abs(mid - 0.99) < 0.001
    assert edge < 0.982

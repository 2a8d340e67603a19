import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from enkf1d.errors import DimensionTooSmall, InvalidDof, NegativeNoncentrality, NonIntegrable
from enkf1d.riccati import coeffs_from_model, phi
from enkf1d.stochastic_riccati import (
    ChiSqChainState,
    PerturbationDraw,
    PerturbationState,
    check_inverse_moment_bounds,
    chisq_chain_step,
    chisq_predict,
    chisq_update,
    helmert_matrix,
    inverse_chisq_moment_oracle,
    inverse_moment_bracket,
    inverse_moment_closed_form_central,
    perturbation_chain_step,
    perturbation_means,
    sample_noncentral_chisq,
    simulate_chisq_chain,
    simulate_perturbation_chain,
)


def test_helmert_examples():
    r = 1 / math.sqrt(2)
    np.testing.assert_allclose(helmert_matrix(2), [[r, r], [r, -r]], atol=1e-15)
    s = 1 / math.sqrt(6)
    np.testing.assert_allclose(helmert_matrix(3)[2], [s, s, -2 * s], atol=1e-15)
    with pytest.raises(DimensionTooSmall):
        helmert_matrix(1)


@given(st.integers(2, 40))
def test_helmert_orthogonal(m):
    H = helmert_matrix(m)
    np.testing.assert_allclose(H @ H.T, np.eye(m), atol=1e-12)
    v = np.random.default_rng(m).standard_normal(m)
    assert np.linalg.norm(H.T @ H @ v) == pytest.approx(np.linalg.norm(v), rel=1e-12)


@pytest.mark.parametrize("method", ["sum_of_squares", "rotated"])
@pytest.mark.parametrize("dof,lam", [(5, 0.0), (5, 3.0), (1, 2.0)])
def test_chisq_sampler_mean(method, dof, lam, rng):
    x = sample_noncentral_chisq(dof, lam, rng, size=100_000, method=method)
    assert np.all(x >= 0)
    assert abs(x.mean() - (dof + lam)) < 5 * x.std() / math.sqrt(x.size)


@pytest.mark.parametrize("method", ["sum_of_squares", "rotated"])
def test_chisq_sampler_law(method, rng):
    assert stats.kstest(sample_noncentral_chisq(1, 0.0, rng, size=20_000, method=method), "chi2", args=(1,)).pvalue > 0.01
    x = sample_noncentral_chisq(4, 2.5, rng, size=20_000, method=method)
    assert stats.kstest(x, "ncx2", args=(4, 2.5)).pvalue > 0.01


def test_chisq_sampler_errors(rng):
    with pytest.raises(InvalidDof):
        sample_noncentral_chisq(0, 1.0, rng)
    with pytest.raises(NegativeNoncentrality):
        sample_noncentral_chisq(3, -1.0, rng)
    with pytest.raises(ValueError):
        sample_noncentral_chisq(3, 1.0, rng, method="bogus")


@given(st.floats(0, 50), st.floats(0.3, 2.0), st.floats(0.3, 2.0))
def test_zero_draws_give_riccati_map(p, A, B):
    from enkf1d.model import new_model
    m = new_model(A, B, 1.0, 1.0)
    z = PerturbationDraw.zeros(())
    out = perturbation_chain_step(m, PerturbationState(np.float64(p)), 10, None, draws=(z, z))
    assert float(out.p) == pytest.approx(phi(coeffs_from_model(m), p), rel=1e-12)
    assert out.negative_events == 0


def test_perturbation_step_one_step_unbiased(unit, rng):
    # the one-step conditional mean is exactly phi(p); the concavity bias appears from two steps on
    out = perturbation_chain_step(unit, PerturbationState(np.full(200_000, 1.0)), 10, rng)
    assert abs(out.p.mean() - 1.5) < 5 * out.p.std() / math.sqrt(out.p.size)
    two = perturbation_chain_step(unit, out, 10, rng)
    c = coeffs_from_model(unit)
    se = two.p.std() / math.sqrt(two.p.size)
    assert two.p.mean() + 3 * se < phi(c, phi(c, 1.0))


def test_perturbation_chain_nonnegative(unit, rng):
    path = simulate_perturbation_chain(unit, 4, 20, rng, size=5000)
    assert np.all(path.p >= 0) and np.all(path.p_hat >= 0)
    assert path.p.shape == (5000, 21)


def test_perturbation_means_zero_noise_is_kalman(unit, rng):
    from enkf1d.kalman import run_kalman
    Y = rng.standard_normal(8)
    kf = run_kalman(unit, Y)
    z = np.zeros(8)
    m, m_hat = perturbation_means(unit, Y, kf.pred_var, 0.0, z, z, 10)
    np.testing.assert_allclose(m, kf.pred_mean, atol=1e-13)
    np.testing.assert_allclose(m_hat, kf.upd_mean, atol=1e-13)


def test_chisq_conditional_means(unit, rng):
    M = 1_000_000
    p_hat = chisq_update(unit, np.ones(M), 10, rng, method="rotated")
    assert abs(p_hat.mean() - 0.5) < 5 * p_hat.std() / math.sqrt(M)
    p = chisq_predict(unit, np.full(M, 0.5), 10, rng, method="rotated")
    assert abs(p.mean() - 1.5) < 5 * p.std() / math.sqrt(M)


def test_chisq_zero_variance(unit, rng):
    assert np.all(chisq_update(unit, np.zeros(10), 5, rng) == 0)
    p = chisq_predict(unit, np.zeros(100_000), 5, rng)
    assert abs(p.mean() - unit.R) < 5 * p.std() / math.sqrt(p.size)


def test_chisq_chain_step_stages(unit, rng):
    s = ChiSqChainState(np.ones(3))
    s1 = chisq_chain_step(unit, s, 10, rng)
    s2 = chisq_chain_step(unit, s1, 10, rng)
    assert s1.stage == "updated" and s2.stage == "predictor" and s2.n == 1


def test_chisq_chain_shape_and_init(unit, rng):
    p, p_hat = simulate_chisq_chain(unit, 10, 5, rng, size=40_000)
    assert p.shape == p_hat.shape == (40_000, 6)
    assert abs(p[:, 0].mean() - unit.p0) < 5 * p[:, 0].std() / 200


def test_inverse_moment_examples():
    assert inverse_chisq_moment_oracle(5, 0.0, 1) == pytest.approx(1.25, rel=1e-9)
    assert inverse_chisq_moment_oracle(7, 1.3, 0) == 1.0
    v = inverse_chisq_moment_oracle(20, 1.0, 1)
    lo, hi = inverse_moment_bracket(20, 1.0, 1)
    assert (lo, hi) == pytest.approx((0.5, 0.5 + 0.1 * (1 + 2 / 18)))
    assert lo <= v <= hi
    v = inverse_chisq_moment_oracle(10, 0.0, 1)
    assert v == pytest.approx(20 / 18, rel=1e-9)
    assert inverse_moment_bracket(10, 0.0, 1) == pytest.approx((1.0, 1.25))
    with pytest.raises(NonIntegrable):
        inverse_chisq_moment_oracle(2, 0.0, 2)


@settings(max_examples=20, deadline=None)
@given(st.integers(4, 60), st.integers(1, 2))
def test_inverse_moment_central_closed_form(n, k):
    if n > k + 1:
        assert inverse_chisq_moment_oracle(n, 0.0, k) == pytest.approx(
            inverse_moment_closed_form_central(n, k), rel=1e-8)


def test_inverse_moment_grid():
    rep = check_inverse_moment_bounds()
    assert rep.ok, rep.violations
    assert (8, 0.0, 3, "centered") in rep.skipped

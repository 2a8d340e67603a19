import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from enkf1d.errors import InvalidRange, StageMismatch
from enkf1d.kalman import (
    PREDICTOR,
    UPDATED,
    KalmanState,
    kalman_gain,
    kalman_predict,
    kalman_update,
    kalman_variances,
    run_kalman,
    stability_product,
    stability_product_bound,
    steady_state_variance,
)
from enkf1d.model import new_model, simulate_trajectory
from enkf1d.riccati import coeffs_from_model, d_phi_n

GOLDEN = (1 + math.sqrt(5)) / 2
nonzero = st.floats(0.2, 3.0) | st.floats(-3.0, -0.2)
models = st.builds(new_model, nonzero, nonzero, nonzero, nonzero)


def test_update_examples(unit):
    s = kalman_update(unit, KalmanState(PREDICTOR, 0.0, 1.0), 1.0)
    assert (s.gain, s.mean, s.variance) == (0.5, 0.5, 0.5)
    assert s.stage == UPDATED
    s = kalman_update(unit, KalmanState(PREDICTOR, 3.0, 0.0), 10.0)
    assert (s.gain, s.mean, s.variance) == (0.0, 3.0, 0.0)
    s = kalman_update(unit, KalmanState(PREDICTOR, 2.0, 4.0), 2.0)
    assert s.mean == 2.0 and s.variance == pytest.approx((1 - s.gain) * 4.0)


def test_predict_examples(unit, unstable):
    assert kalman_predict(unit, KalmanState(UPDATED, 0.0, 0.5)).variance == 1.5
    assert kalman_predict(unit, KalmanState(UPDATED, 0.0, 0.0)).variance == unit.R
    assert kalman_predict(unstable, KalmanState(UPDATED, 2.0, 0.0)).mean == pytest.approx(2.4)


def test_stage_mismatch(unit):
    with pytest.raises(StageMismatch):
        kalman_update(unit, KalmanState(UPDATED, 0.0, 1.0), 0.0)
    with pytest.raises(StageMismatch):
        kalman_predict(unit, KalmanState(PREDICTOR, 0.0, 1.0))


@given(models, st.floats(0, 50))
def test_gain_identity(m, P):
    # 1 - G C = 1 / (1 + S P)
    assert 1 - kalman_gain(m, P) * m.C == pytest.approx(1 / (1 + m.S * P), abs=1e-12)


def test_run_kalman_variance_track(unit, rng):
    tr = run_kalman(unit, rng.standard_normal(4))
    np.testing.assert_allclose(tr.pred_var, [1, 1.5, 1.6, 21 / 13], rtol=1e-14)
    other = run_kalman(unit, 100 * rng.standard_normal(4))
    np.testing.assert_array_equal(tr.pred_var, other.pred_var)
    pairs = tr.states()
    assert len(pairs) == 4 and pairs[0][0].stage == PREDICTOR and pairs[0][1].stage == UPDATED


def test_run_kalman_empty(unit):
    s = run_kalman(unit, [])
    assert isinstance(s, KalmanState) and s.stage == PREDICTOR and s.variance == unit.p0


def test_run_kalman_matches_stepwise(unstable, rng):
    Y = rng.standard_normal(8)
    tr = run_kalman(unstable, Y)
    s = KalmanState(PREDICTOR, unstable.x0_mean, unstable.p0)
    for n, y in enumerate(Y):
        assert s.mean == pytest.approx(tr.pred_mean[n], rel=1e-13, abs=1e-13)
        s = kalman_update(unstable, s, y)
        assert s.variance == pytest.approx(tr.upd_var[n], rel=1e-13)
        s = kalman_predict(unstable, s)


def test_variances_follow_phi(unstable):
    c = coeffs_from_model(unstable)
    P, Phat, G = kalman_variances(unstable, 30)
    assert P[-1] == pytest.approx(c.fixed_point, rel=1e-10)
    assert steady_state_variance(unstable) == pytest.approx(1.95223, abs=1e-5)
    np.testing.assert_allclose(Phat, P / (1 + unstable.S * P))


def test_stability_product_examples(unit):
    assert stability_product(unit, 1.3, 4, 4) == 1.0
    assert stability_product(unit, GOLDEN, 0, 1) == pytest.approx(1 / (1 + GOLDEN), rel=1e-12)
    lam1 = 1 / (1 + GOLDEN)
    c = coeffs_from_model(unit)
    for n in (2, 5, 9):
        E = stability_product(unit, GOLDEN, 0, n)
        assert E == pytest.approx(lam1 ** n, rel=1e-10)
        assert E ** 2 == pytest.approx(d_phi_n(c, GOLDEN, n), rel=1e-10)
    with pytest.raises(InvalidRange):
        stability_product(unit, 1.0, 3, 2)


@given(models, st.floats(0, 20), st.integers(0, 5), st.integers(0, 15))
def test_stability_product_bound(m, p, k, extra):
    n = k + extra
    assert abs(stability_product(m, p, k, n)) <= stability_product_bound(m, k, n) * (1 + 1e-12)


def test_updated_means_contract_by_product(unstable, rng):
    # Xhat_n(x1) - Xhat_n(x2) = E_{0,n}(p0) (x1 - x2) / (1 + S p0)
    Y = rng.standard_normal(12)
    a = run_kalman(unstable, Y, x0_mean=3.0)
    b = run_kalman(unstable, Y, x0_mean=-1.0)
    for n in (0, 4, 11):
        E = stability_product(unstable, unstable.p0, 0, n)
        expect = E * 4.0 / (1 + unstable.S * unstable.p0)
        assert a.upd_mean[n] - b.upd_mean[n] == pytest.approx(expect, rel=1e-10)


def test_replicated_observations(unit, rng):
    tr = simulate_trajectory(unit, 5, rng, size=7)
    k = run_kalman(unit, tr.observations)
    assert k.pred_mean.shape == (7, 6) and k.pred_var.shape == (6,)
    single = run_kalman(unit, tr.observations[3])
    np.testing.assert_allclose(k.upd_mean[3], single.upd_mean)

import math

import numpy as np
import pytest

from enkf1d.errors import MissingKalmanTrack
from enkf1d.kalman import run_kalman
from enkf1d.limits import (
    cf_envelope,
    empirical_cf_gap,
    gain_fluctuation,
    limit_noise_params,
    simulate_limit_Q,
    simulate_limit_X,
)
from enkf1d.model import new_model


def test_initial_variances(unit, rng):
    path = simulate_limit_Q(unit, 3, rng, size=200_000)
    q0 = path.Q[:, 0]
    assert abs(q0.var() - 2.0) < 5 * 2.0 * math.sqrt(2 / q0.size)
    q1 = path.Q[:, 1]
    assert q1.var() == pytest.approx(4.5, rel=0.03)


def test_degenerate_initial_condition(rng):
    m = new_model(1, 1, 1, 1, p0=0.0)
    path = simulate_limit_Q(m, 2, rng, size=100)
    assert np.all(path.Q[:, 0] == 0)


def test_noise_params_unit(unit):
    lp = limit_noise_params(unit, 2)
    assert lp.sd_V[0] ** 2 == pytest.approx(2.0)
    # Var(Vhat_0) = 4 (1/4)(1/4) 1 + 2 (1/16) = 0.375
    assert lp.sd_V_hat[0] ** 2 == pytest.approx(0.375)
    assert lp.sd_V[1] ** 2 == pytest.approx(4.0)


def test_gain_fluctuation(unit):
    assert gain_fluctuation(unit, 2.0, 1.0) == pytest.approx(0.5)
    assert gain_fluctuation(unit, 0.0, 3.0) == 0.0


def test_zero_innovation_limit_mean(unit, rng):
    kf = run_kalman(unit, np.zeros(3))
    Y = unit.C * kf.pred_mean  # forces zero innovations
    path = simulate_limit_X(unit, Y, 2, rng, size=200_000, kalman_track=kf)
    x0, xh0 = path.X[:, 0], path.X_hat[:, 0]
    assert x0.var() == pytest.approx(1.0, rel=0.02)
    assert xh0.var() == pytest.approx(0.5, rel=0.02)


def test_limit_X_innovation_term(unit):
    # with identical draws, the gap between two observation records is GG_n times the innovation gap
    kf = run_kalman(unit, np.zeros(2))
    a = simulate_limit_X(unit, np.zeros(2), 1, np.random.default_rng(3), size=5, kalman_track=kf)
    b = simulate_limit_X(unit, np.array([1.0, 0.0]), 1, np.random.default_rng(3), size=5, kalman_track=kf)
    np.testing.assert_allclose(b.X_hat[:, 0] - a.X_hat[:, 0], gain_fluctuation(unit, a.Q[:, 0], kf.pred_var[0]))


def test_missing_track(unit, rng):
    with pytest.raises(MissingKalmanTrack):
        simulate_limit_X(unit, None, 3, rng)
    kf = run_kalman(unit, np.zeros(2))
    with pytest.raises(MissingKalmanTrack):
        simulate_limit_X(unit, np.zeros(5), 4, rng, kalman_track=kf)


def test_cf_envelope_and_gap(rng):
    assert cf_envelope([0, 3, 0], 100)[0] == 0.0
    assert cf_envelope([0, 0, 0], 10)[0] == 0.0
    rep = empirical_cf_gap(100, 100_000, rng=rng)
    assert rep.gap[0] == pytest.approx(0.0, abs=1e-12)
    assert rep.ok
    with pytest.raises(ValueError):
        empirical_cf_gap(10, 5000, frequencies=[[0, 0, 6]], rng=rng)

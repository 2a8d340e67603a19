import numpy as np
import pytest

from enkf1d.errors import NegativeVariance, ZeroParameter
from enkf1d.model import ModelParams, new_model, signal_moments, simulate_trajectory


@pytest.mark.parametrize("name", ["A", "B", "C", "D"])
def test_zero_parameter_rejected(name):
    kw = dict(A=1.0, B=1.0, C=1.0, D=1.0)
    kw[name] = 0.0
    with pytest.raises(ZeroParameter, match="nonzero"):
        ModelParams(**kw)


def test_negative_p0_rejected():
    with pytest.raises(NegativeVariance):
        new_model(1, 1, 1, 1, p0=-0.1)


def test_derived_quantities():
    m = new_model(1.2, 0.5, 2.0, 4.0)
    assert m.R == pytest.approx(0.25)
    assert m.S == pytest.approx(0.25)
    assert m.replace(A=0.5).A == 0.5


def test_trajectory_shapes_and_recursion(unit, rng):
    tr = simulate_trajectory(unit, 15, rng, size=(3, 4))
    assert tr.states.shape == (3, 4, 16)
    assert tr.horizon == 15
    X, Y = tr.states, tr.observations
    np.testing.assert_allclose(Y, unit.C * X + unit.D * tr.obs_noise)
    np.testing.assert_allclose(X[..., 1:], unit.A * X[..., :-1] + unit.B * tr.signal_noise[..., 1:])


def test_trajectory_reproducible(unit):
    a = simulate_trajectory(unit, 10, np.random.default_rng(3))
    b = simulate_trajectory(unit, 10, np.random.default_rng(3))
    np.testing.assert_array_equal(a.states, b.states)
    with pytest.raises(ValueError):
        simulate_trajectory(unit, -1, np.random.default_rng(0))


def test_signal_moments_monte_carlo(rng):
    m = new_model(0.9, 0.7, 1.0, 1.0, x0_mean=2.0, p0=0.5)
    tr = simulate_trajectory(m, 6, rng, size=200_000)
    mean, var = signal_moments(m, 6)
    x = tr.states[:, 6]
    assert abs(x.mean() - mean) < 5 * np.sqrt(var / x.size)
    assert abs(x.var() - var) < 5 * var * np.sqrt(2 / x.size)

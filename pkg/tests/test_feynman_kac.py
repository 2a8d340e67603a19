import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enkf1d.errors import ConditionViolated
from enkf1d.feynman_kac import (
    FiniteChain,
    check_decay_bound,
    fk_expectation_exact,
    fk_path_sides,
    random_finite_chain,
    tilted_transition,
    variance_chain_surrogate,
)
from enkf1d.model import new_model


def uniform2(H, h=(1.0, 1.0)):
    return FiniteChain(np.full((2, 2), 0.5), np.array(H, float), np.array(h, float))


def test_tilt_examples():
    c = uniform2([0.4, 0.6])
    np.testing.assert_allclose(tilted_transition(c), c.M)
    t = tilted_transition(uniform2([1, 1], [1, 2]))
    np.testing.assert_allclose(t, [[2 / 3, 1 / 3], [2 / 3, 1 / 3]])


def test_expectation_examples():
    c = uniform2([0.4, 0.6])
    np.testing.assert_allclose(fk_expectation_exact(c, 3).direct, 0.125)
    np.testing.assert_allclose(fk_expectation_exact(c, 0).direct, 1.0)
    const = uniform2([0.7, 0.7], [1, 3])
    np.testing.assert_allclose(fk_expectation_exact(const, 5).tilted, 0.7 ** 5, rtol=1e-13)


@settings(max_examples=50)
@given(st.integers(2, 8), st.integers(0, 12), st.integers(0, 10 ** 6))
def test_change_of_measure(m, n, seed):
    c = random_finite_chain(m, np.random.default_rng(seed))
    K = tilted_transition(c)
    np.testing.assert_allclose(K.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(1.0 / (c.M @ (1 / c.h)), (K @ c.h) * 1.0, rtol=1e-12)
    assert fk_expectation_exact(c, n).max_rel_diff <= 1e-10


def test_path_functional(rng):
    c = random_finite_chain(3, rng)
    lhs, rhs = fk_path_sides(c, 4, lambda path: 1.0 + path[0] * path[-1])
    assert lhs == pytest.approx(rhs, rel=1e-12)
    lhs, rhs = fk_path_sides(c, 3, lambda path: 1.0)
    assert lhs == pytest.approx(fk_expectation_exact(c, 3).direct[c.initial], rel=1e-12)


def test_decay_bound_constant_case():
    rep = check_decay_bound(uniform2([0.5, 0.5]), 10)
    assert rep.epsilon_h == pytest.approx(0.5) and rep.kappa_h == 1.0
    np.testing.assert_allclose(rep.sup_values, rep.bounds)
    assert rep.ok


def test_decay_bound_violated():
    with pytest.raises(ConditionViolated):
        check_decay_bound(uniform2([2.0, 2.0]), 5)


@settings(max_examples=30)
@given(st.integers(2, 6), st.integers(0, 10 ** 6))
def test_decay_bound_random(m, seed):
    c = random_finite_chain(m, np.random.default_rng(seed))
    if c.epsilon_h > 0:
        assert check_decay_bound(c, 12).ok


def test_variance_surrogate():
    chain, pts = variance_chain_surrogate(new_model(1.2, 1, 1, 1), 10, k=1, cells=24, inner=120)
    assert chain.m == 24 and np.all(np.diff(pts) > 0)
    np.testing.assert_allclose(chain.M.sum(axis=1), 1.0)
    rep = check_decay_bound(chain, 20) if chain.epsilon_h > 0 else None
    assert fk_expectation_exact(chain, 10).max_rel_diff < 1e-10
    if rep is not None:
        assert rep.ok and rep.fitted_rate < 0

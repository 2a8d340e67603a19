"""Feynman-Kac change of measure on finite state spaces.

For a Markov kernel M, a positive potential H and a positive tilt h,

    E(F(X_1..X_n) prod H(X_k) | X_0 = x)
      = E(F(Y_1..Y_n) M(1/h)(Y_0)/M(1/h)(Y_n) prod H^h(Y_k) | Y_0 = x)

where Y runs under M^{1/h}(x, y) = M(x, y) h(y)**-1 / M(1/h)(x) and
H^h = H h M(1/h). Both sides are exact linear algebra here.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConditionViolated
from .model import ModelParams
from .riccati import coeffs_from_model


@dataclass(frozen=True)
class FiniteChain:
    M: np.ndarray
    H: np.ndarray
    h: np.ndarray
    initial: int = 0

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        H = np.asarray(self.H, dtype=float)
        h = np.asarray(self.h, dtype=float)
        m = M.shape[0]
        if M.shape != (m, m) or H.shape != (m,) or h.shape != (m,):
            raise ValueError("M must be m x m and H, h of length m")
        if np.any(M < 0) or not np.allclose(M.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise ValueError("rows of M must be probability vectors")
        if np.any(H <= 0) or np.any(h <= 0):
            raise ValueError("H and h must be positive")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)

    @property
    def m(self) -> int:
        return self.M.shape[0]

    @property
    def M_inv_h(self) -> np.ndarray:
        """M(1/h)(x)."""
        return self.M @ (1.0 / self.h)

    @property
    def H_h(self) -> np.ndarray:
        """Transformed potential H^h = H h M(1/h)."""
        return self.H * self.h * self.M_inv_h

    @property
    def epsilon_h(self) -> float:
        return 1.0 - float(self.H_h.max())

    @property
    def kappa_h(self) -> float:
        v = self.M_inv_h
        return float(v.max() / v.min())


def random_finite_chain(m: int, rng: np.random.Generator) -> FiniteChain:
    M = rng.dirichlet(np.ones(m), size=m)
    M /= M.sum(axis=1, keepdims=True)
    return FiniteChain(M, rng.uniform(0.1, 1.5, m), rng.uniform(0.5, 2.0, m))


def tilted_transition(chain: FiniteChain) -> np.ndarray:
    K = chain.M / chain.h[None, :] / chain.M_inv_h[:, None]
    return K / K.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class FKComparison:
    direct: np.ndarray
    tilted: np.ndarray

    @property
    def max_rel_diff(self) -> float:
        return float(np.max(np.abs(self.direct - self.tilted) / np.abs(self.direct)))


def fk_direct(chain: FiniteChain, n: int) -> np.ndarray:
    """x -> E(prod_{1<=k<=n} H(X_k) | X_0 = x) via (M diag H)**n 1."""
    Q = chain.M * chain.H[None, :]
    v = np.ones(chain.m)
    for _ in range(n):
        v = Q @ v
    return v


def fk_tilted(chain: FiniteChain, n: int) -> np.ndarray:
    """Right-hand side under the tilted chain."""
    K = tilted_transition(chain) * chain.H_h[None, :]
    v = 1.0 / chain.M_inv_h
    for _ in range(n):
        v = K @ v
    return chain.M_inv_h * v


def fk_expectation_exact(chain: FiniteChain, n: int) -> FKComparison:
    if n < 0:
        raise ValueError("n must be >= 0")
    return FKComparison(fk_direct(chain, n), fk_tilted(chain, n))


def fk_path_sides(chain: FiniteChain, n: int, F) -> tuple[float, float]:
    """Both sides for a path functional F(x_1..x_n), by enumerating all paths from ``initial``."""
    K = tilted_transition(chain)
    Mh = chain.M_inv_h
    x0 = chain.initial
    lhs = rhs = 0.0
    for path in itertools.product(range(chain.m), repeat=n):
        f = F(path)
        if f == 0:
            continue
        prob = prob_h = 1.0
        pot = pot_h = 1.0
        prev = x0
        for y in path:
            prob *= chain.M[prev, y]
            prob_h *= K[prev, y]
            pot *= chain.H[y]
            pot_h *= chain.H_h[y]
            prev = y
        lhs += f * prob * pot
        rhs += f * prob_h * Mh[x0] / Mh[prev] * pot_h
    return lhs, rhs


@dataclass(frozen=True)
class DecayReport:
    epsilon_h: float
    kappa_h: float
    sup_values: np.ndarray
    bounds: np.ndarray
    fitted_rate: float

    @property
    def ok(self) -> bool:
        return bool(np.all(self.sup_values <= self.bounds * (1 + 1e-12)))


def check_decay_bound(chain: FiniteChain, n: int) -> DecayReport:
    """sup_x E(prod H | X_0 = x) <= kappa_h (1 - eps_h)**k for k = 0..n."""
    eps, kappa = chain.epsilon_h, chain.kappa_h
    if not eps > 0:
        raise ConditionViolated(f"tilt condition fails: eps_h = {eps:.6g} <= 0, decay bound not applicable")
    Q = chain.M * chain.H[None, :]
    v = np.ones(chain.m)
    sups = np.empty(n + 1)
    for k in range(n + 1):
        sups[k] = v.max()
        v = Q @ v
    ks = np.arange(n + 1)
    rate = float(np.polyfit(ks[n // 2:], np.log(sups[n // 2:]), 1)[0]) if n >= 4 else float("nan")
    return DecayReport(eps, kappa, sups, kappa * (1 - eps) ** ks, rate)


def variance_chain_surrogate(params: ModelParams, N: int, k: int = 1, cells: int = 64,
                             inner: int = 400) -> tuple[FiniteChain, np.ndarray]:
    """Discretize one full step of the chi-square variance chain.

    States are the geometric midpoints of ``cells`` cells spanning
    [R/2, 2a/c]; mass outside the range is lumped into the end cells. The
    update law is integrated on ``inner`` nodes, the prediction CDF is exact.
    Returns the chain with H(p) = (|A|/(1+Sp))**k and h(p) = p**k, and the grid.
    """
    coeffs = coeffs_from_model(params)
    edges = np.geomspace(0.5 * params.R, 2.0 * coeffs.a / coeffs.c, cells + 1)
    pts = np.sqrt(edges[:-1] * edges[1:])
    S, R, A2 = params.S, params.R, params.A ** 2
    M = np.empty((cells, cells))
    for i, p in enumerate(pts):
        scale = (p / (1 + S * p)) ** 2 * S / N
        upd = stats.ncx2(N, N / (S * p))
        mu, sd = upd.mean(), upd.std()
        t = np.linspace(max(mu - 10 * sd, 0.0), mu + 10 * sd, inner + 1)
        t = 0.5 * (t[:-1] + t[1:])
        w = upd.pdf(t)
        w /= w.sum()
        p_hat = scale * t
        cdf = stats.ncx2.cdf(edges[None, :] * N / R, N, N * A2 / R * p_hat[:, None])
        cdf[:, 0] = 0.0
        cdf[:, -1] = 1.0
        M[i] = w @ np.diff(cdf, axis=1)
    M /= M.sum(axis=1, keepdims=True)
    H = (abs(params.A) / (1 + S * pts)) ** k
    return FiniteChain(M, H, pts ** k), pts

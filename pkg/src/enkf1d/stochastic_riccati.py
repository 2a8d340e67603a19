"""Exact alternative representations of the EnKF sample-variance process.

Two autonomous Markov chains reproduce the law of the ensemble variance
(p_n, p_hat_n) without simulating particles:

* the local perturbation chain, which adds an O(1/sqrt(N)) fluctuation to
  each Riccati half step, built from a Gaussian coordinate and a centered
  chi-square coordinate of the same N normals;
* the non-central chi-square chain, nonnegative by construction.

Neither chain reads observations. The module also holds the Helmert
rotation and a quadrature oracle for inverse moments of non-central
chi-square variables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, special, stats

from .errors import (
    DimensionTooSmall,
    InvalidDof,
    NegativeInput,
    NegativeNoncentrality,
    NonIntegrable,
)
from .kalman import PREDICTOR, UPDATED
from .model import ModelParams

SAMPLERS = ("sum_of_squares", "rotated")


def helmert_matrix(m: int) -> np.ndarray:
    """Orthogonal m x m matrix whose first row is constant."""
    if int(m) != m or m < 2:
        raise DimensionTooSmall(f"Helmert matrix needs m >= 2, got {m}")
    m = int(m)
    H = np.zeros((m, m))
    H[0] = 1.0 / math.sqrt(m)
    for i in range(2, m + 1):
        scale = 1.0 / math.sqrt(i * (i - 1))
        H[i - 1, : i - 1] = scale
        H[i - 1, i - 1] = -(i - 1) * scale
    return H


def sample_noncentral_chisq(dof: int, noncentrality, rng: np.random.Generator, size=None,
                            method: str = "sum_of_squares") -> np.ndarray:
    """Draw chi^2_{dof, lambda} = sum_{i <= dof} (Z_i + sqrt(lambda/dof))**2.

    ``sum_of_squares`` builds each draw from dof shifted normals.
    ``rotated`` uses the equal-in-law form (Z + sqrt(lambda))**2 + chi^2_{dof-1},
    which costs O(1) per draw.
    """
    if int(dof) != dof or dof < 1:
        raise InvalidDof(f"degrees of freedom must be an integer >= 1, got {dof}")
    dof = int(dof)
    lam = np.asarray(noncentrality, dtype=float)
    if np.any(lam < 0) or np.any(np.isnan(lam)):
        raise NegativeNoncentrality("noncentrality must be >= 0")
    shape = np.broadcast_shapes(lam.shape, () if size is None else tuple(np.atleast_1d(size)))
    if method == "sum_of_squares":
        z = rng.standard_normal(shape + (dof,))
        shift = np.sqrt(lam / dof)[..., None]
        return np.sum((z + shift) ** 2, axis=-1)
    if method == "rotated":
        z = rng.standard_normal(shape)
        out = (z + np.sqrt(lam)) ** 2
        if dof > 1:
            out = out + rng.chisquare(dof - 1, size=shape)
        return out
    raise ValueError(f"unknown sampler {method!r}; expected one of {SAMPLERS}")


# --- local perturbation chain -------------------------------------------


@dataclass(frozen=True)
class PerturbationDraw:
    """Standardized sources of one half step.

    ``gauss`` is the normalized sum of N normals, ``chi`` the centered
    normalized chi-square (1/sqrt(N)) sum (Z_i**2 - 1)/sqrt(2) of the same N
    normals, and ``mean`` an independent normal driving the sample mean.
    """

    mean: np.ndarray
    gauss: np.ndarray
    chi: np.ndarray

    @classmethod
    def sample(cls, N: int, rng: np.random.Generator, shape=()) -> "PerturbationDraw":
        mean = rng.standard_normal(shape)
        z = rng.standard_normal(tuple(shape) + (N,))
        gauss = z.sum(axis=-1) / math.sqrt(N)
        chi = (z * z - 1.0).sum(axis=-1) / math.sqrt(2.0 * N)
        return cls(mean, gauss, chi)

    @classmethod
    def zeros(cls, shape=()) -> "PerturbationDraw":
        z = np.zeros(shape)
        return cls(z, z, z)


@dataclass(frozen=True)
class PerturbationState:
    """Variance p (predictor) or p_hat (updated) of the perturbation chain.

    ``last_local`` holds the most recent local perturbations: (nu_hat,)
    after an update and (nu_hat, nu, delta) after a full step, where
    delta = A**2 nu_hat + nu. ``negative_events`` counts half steps whose
    output fell below zero (only possible through rounding).
    """

    p: np.ndarray
    stage: str = PREDICTOR
    last_local: tuple = ()
    negative_events: int = 0


def local_update_fluctuation(params: ModelParams, p, draw: PerturbationDraw):
    """nu_hat = -2 g D (1 - g C) sqrt(p) gauss + sqrt(2) g**2 D**2 chi."""
    p = np.asarray(p, dtype=float)
    g = params.C * p / (params.C ** 2 * p + params.D ** 2)
    one_minus = 1.0 / (1.0 + params.S * p)
    gD = g * params.D
    return -2.0 * gD * one_minus * np.sqrt(np.maximum(p, 0.0)) * draw.gauss + math.sqrt(2.0) * gD * gD * draw.chi


def local_predict_fluctuation(params: ModelParams, p_hat, draw: PerturbationDraw):
    """nu = 2 A B sqrt(p_hat) gauss + sqrt(2) R chi."""
    p_hat = np.asarray(p_hat, dtype=float)
    return (2.0 * params.A * params.B * np.sqrt(np.maximum(p_hat, 0.0)) * draw.gauss
            + math.sqrt(2.0) * params.R * draw.chi)


def perturbation_update(params: ModelParams, p, N: int, draw: PerturbationDraw):
    p = np.asarray(p, dtype=float)
    nu_hat = local_update_fluctuation(params, p, draw)
    return p / (1.0 + params.S * p) + nu_hat / math.sqrt(N), nu_hat


def perturbation_predict(params: ModelParams, p_hat, N: int, draw: PerturbationDraw):
    nu = local_predict_fluctuation(params, p_hat, draw)
    return params.A ** 2 * np.asarray(p_hat) + params.R + nu / math.sqrt(N), nu


def perturbation_initial(params: ModelParams, N: int, draw: PerturbationDraw):
    """p_0 = P_0 + sqrt(2) P_0 chi / sqrt(N), i.e. (P_0/N) times a chi^2_N."""
    return params.p0 + math.sqrt(2.0) * params.p0 * np.asarray(draw.chi) / math.sqrt(N)


def perturbation_chain_step(params: ModelParams, state: PerturbationState, N: int,
                            rng: np.random.Generator,
                            draws: Optional[tuple[PerturbationDraw, PerturbationDraw]] = None) -> PerturbationState:
    """One update-then-predict step; ``draws`` overrides the random sources."""
    if N < 1:
        raise InvalidDof("N must be >= 1")
    if state.stage != PREDICTOR:
        from .errors import StageMismatch
        raise StageMismatch("perturbation_chain_step expects a predictor state")
    p = np.asarray(state.p, dtype=float)
    if np.any(p < 0):
        raise NegativeInput("p must be >= 0")
    if draws is None:
        draws = (PerturbationDraw.sample(N, rng, p.shape), PerturbationDraw.sample(N, rng, p.shape))
    p_hat, nu_hat = perturbation_update(params, p, N, draws[0])
    neg = int(np.count_nonzero(p_hat < 0))
    p_hat = np.maximum(p_hat, 0.0)
    p_next, nu = perturbation_predict(params, p_hat, N, draws[1])
    neg += int(np.count_nonzero(p_next < 0))
    p_next = np.maximum(p_next, 0.0)
    delta = params.A ** 2 * nu_hat + nu
    return PerturbationState(p_next, PREDICTOR, (nu_hat, nu, delta), state.negative_events + neg)


@dataclass(frozen=True)
class PerturbationPath:
    """Variance path of the perturbation chain plus the mean-noise sources.

    ``mean_draw_init`` drives m_0, ``mean_draw_update[..., n]`` the update
    at step n and ``mean_draw_predict[..., n]`` the prediction into step n
    (index 0 unused).
    """

    p: np.ndarray
    p_hat: np.ndarray
    nu_hat: np.ndarray
    nu: np.ndarray
    mean_draw_init: np.ndarray
    mean_draw_update: np.ndarray
    mean_draw_predict: np.ndarray
    N: int
    negative_events: int = 0


def simulate_perturbation_chain(params: ModelParams, N: int, horizon: int, rng: np.random.Generator,
                                size=None) -> PerturbationPath:
    """Draw order per replicate block: initial, then update n / predict n+1."""
    shape = () if size is None else tuple(np.atleast_1d(size))
    p = np.empty(shape + (horizon + 1,))
    p_hat = np.empty_like(p)
    nu_hat = np.empty_like(p)
    nu = np.zeros_like(p)
    mu_upd = np.empty_like(p)
    mu_pred = np.zeros_like(p)
    init = PerturbationDraw.sample(N, rng, shape)
    p[..., 0] = perturbation_initial(params, N, init)
    neg = 0
    for n in range(horizon + 1):
        if n > 0:
            d = PerturbationDraw.sample(N, rng, shape)
            val, nu[..., n] = perturbation_predict(params, p_hat[..., n - 1], N, d)
            neg += int(np.count_nonzero(val < 0))
            p[..., n] = np.maximum(val, 0.0)
            mu_pred[..., n] = d.mean
        d = PerturbationDraw.sample(N, rng, shape)
        val, nu_hat[..., n] = perturbation_update(params, p[..., n], N, d)
        neg += int(np.count_nonzero(val < 0))
        p_hat[..., n] = np.maximum(val, 0.0)
        mu_upd[..., n] = d.mean
    return PerturbationPath(p, p_hat, nu_hat, nu, init.mean, mu_upd, mu_pred, int(N), neg)


def perturbation_means(params: ModelParams, observations, p, mean_draw_init, mean_draw_update,
                       mean_draw_predict, N: int):
    """Sample means driven by a variance path and its mean-noise sources.

    m_hat = m + g (Y - C m) - g D e_hat / sqrt(N+1),
    m'    = A m_hat + B e / sqrt(N+1),
    m_0   = x0_mean + sqrt(P_0) e_0 / sqrt(N+1).
    """
    Y = np.asarray(observations, dtype=float)
    p = np.asarray(p, dtype=float)
    shape = np.broadcast_shapes(Y.shape, p.shape)
    sq = math.sqrt(N + 1)
    m = np.empty(shape)
    m_hat = np.empty(shape)
    cur = params.x0_mean + math.sqrt(params.p0) * np.asarray(mean_draw_init) / sq
    cur = np.broadcast_to(cur, shape[:-1]).astype(float)
    for n in range(shape[-1]):
        if n > 0:
            cur = params.A * m_hat[..., n - 1] + params.B * mean_draw_predict[..., n] / sq
        m[..., n] = cur
        g = params.C * p[..., n] / (params.C ** 2 * p[..., n] + params.D ** 2)
        m_hat[..., n] = cur + g * (Y[..., n] - params.C * cur) - g * params.D * mean_draw_update[..., n] / sq
    return m, m_hat


# --- non-central chi-square chain ----------------------------------------


@dataclass(frozen=True)
class ChiSqChainState:
    p: np.ndarray
    n: int = 0
    stage: str = PREDICTOR


def chisq_update(params: ModelParams, p, N: int, rng: np.random.Generator, method="sum_of_squares"):
    """p_hat = (p/(1+Sp))**2 (S/N) chi^2_{N, N/(S p)}; p = 0 maps to 0."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise NegativeInput("p must be >= 0")
    S = params.S
    pos = p > 0
    safe = np.where(pos, p, 1.0)
    draw = sample_noncentral_chisq(N, N / (S * safe), rng, method=method)
    out = (safe / (1.0 + S * safe)) ** 2 * (S / N) * draw
    return np.where(pos, out, 0.0)


def chisq_predict(params: ModelParams, p_hat, N: int, rng: np.random.Generator, method="sum_of_squares"):
    """p' = (R/N) chi^2_{N, N (A**2/R) p_hat}."""
    p_hat = np.asarray(p_hat, dtype=float)
    nc = N * params.A ** 2 / params.R * p_hat
    return params.R / N * sample_noncentral_chisq(N, nc, rng, method=method)


def chisq_initial(params: ModelParams, N: int, rng: np.random.Generator, size=None, method="sum_of_squares"):
    """p_0 = (P_0/N) chi^2_{N,0}."""
    return params.p0 / N * sample_noncentral_chisq(N, 0.0, rng, size=size, method=method)


def chisq_chain_step(params: ModelParams, state: ChiSqChainState, N: int, rng: np.random.Generator,
                     method: str = "sum_of_squares") -> ChiSqChainState:
    """Half step: predictor -> updated, or updated -> next predictor."""
    if state.stage == PREDICTOR:
        return ChiSqChainState(chisq_update(params, state.p, N, rng, method), state.n, UPDATED)
    return ChiSqChainState(chisq_predict(params, state.p, N, rng, method), state.n + 1, PREDICTOR)


def simulate_chisq_chain(params: ModelParams, N: int, horizon: int, rng: np.random.Generator, size=None,
                         method: str = "sum_of_squares", p_init=None) -> tuple[np.ndarray, np.ndarray]:
    """Paths (p_n, p_hat_n), n = 0..horizon; ``p_init`` fixes p_0 instead of sampling it."""
    shape = () if size is None else tuple(np.atleast_1d(size))
    if p_init is None:
        cur = chisq_initial(params, N, rng, size=shape, method=method)
    else:
        cur = np.broadcast_to(np.asarray(p_init, dtype=float), shape).copy()
        shape = cur.shape
    p = np.empty(shape + (horizon + 1,))
    p_hat = np.empty_like(p)
    for n in range(horizon + 1):
        if n > 0:
            cur = chisq_predict(params, p_hat[..., n - 1], N, rng, method)
        p[..., n] = cur
        p_hat[..., n] = chisq_update(params, cur, N, rng, method)
    return p, p_hat


# --- inverse moments -------------------------------------------------------


def inverse_chisq_moment_oracle(n: float, x: float, k: int) -> float:
    """E((2n / chi^2_{2n, 2nx})**k) by adaptive quadrature of the density."""
    if k < 0 or int(k) != k:
        raise ValueError("k must be an integer >= 0")
    if x < 0:
        raise NegativeNoncentrality("x must be >= 0")
    if k == 0:
        return 1.0
    if not n > k + 1:
        raise NonIntegrable(f"inverse moment of order {k} needs n > k+1, got n={n}")
    df, nc = 2.0 * n, 2.0 * n * x
    dist = stats.chi2(df) if nc == 0 else stats.ncx2(df, nc)
    mean = df + nc
    sd = math.sqrt(2.0 * (df + 2.0 * nc))
    hi = mean + 12.0 * sd

    def f(t):
        return (df / t) ** k * dist.pdf(t)

    body, _ = integrate.quad(f, 0.0, hi, points=[max(mean - 2 * sd, hi * 1e-3), mean], epsrel=1e-11,
                             epsabs=0.0, limit=400)
    tail, _ = integrate.quad(f, hi, np.inf, epsrel=1e-9, epsabs=0.0)
    return body + tail


def inverse_moment_closed_form_central(n: float, k: int) -> float:
    """E((2n/chi^2_{2n})**k) = n**k Gamma(n-k)/Gamma(n)."""
    if not n > k:
        raise NonIntegrable("need n > k")
    return math.exp(k * math.log(n) + special.gammaln(n - k) - special.gammaln(n))


def inverse_moment_bracket(n: float, x: float, k: int) -> tuple[float, float]:
    """[1/(1+x)**k, 1/(1+x)**k + (k+1) k (1 + (k+1)/(n-k-1))**k / n]."""
    lo = 1.0 / (1.0 + x) ** k
    return lo, lo + (k + 1) * k * (1.0 + (k + 1) / (n - k - 1)) ** k / n


def omega(k: int) -> float:
    return float((k + 2) ** (k + 2))


def centered_ratio_moment(n: float, x: float, k: int) -> float:
    """E(((1+x)/(chi^2_{2n,2nx}/2n) - 1)**k) from the raw inverse moments."""
    return sum(special.comb(k, j) * (1 + x) ** j * inverse_chisq_moment_oracle(n, x, j) * (-1) ** (k - j)
               for j in range(k + 1))


@dataclass
class BoundReport:
    rows: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


DEFAULT_GRID = dict(n=(8, 16, 32, 64), x=(0.0, 0.5, 1.0, 2.0), k=(1, 2, 3))


def check_inverse_moment_bounds(n_values=DEFAULT_GRID["n"], x_values=DEFAULT_GRID["x"],
                                k_values=DEFAULT_GRID["k"], tol: float = 1e-9) -> BoundReport:
    """Check the bracket, the scaled-moment envelope and the centered envelope.

    Each bound is applied only where its own dof condition holds; grid points
    outside a condition are listed in ``skipped``.
    """
    rep = BoundReport()
    for n in n_values:
        for x in x_values:
            for k in k_values:
                if not n > k + 1:
                    rep.skipped.append((n, x, k, "bracket"))
                    continue
                val = inverse_chisq_moment_oracle(n, x, k)
                lo, hi = inverse_moment_bracket(n, x, k)
                row = dict(n=n, x=x, k=k, moment=val, lower=lo, upper=hi)
                if not (lo - tol <= val <= hi + tol):
                    rep.violations.append((n, x, k, "bracket", val, lo, hi))
                env = omega(k) / n * (1 + x) ** k
                if n >= k + 2:
                    scaled = (1 + x) ** k * val - 1.0
                    row["scaled_excess"] = scaled
                    if not (-tol <= scaled <= env + tol):
                        rep.violations.append((n, x, k, "scaled", scaled, 0.0, env))
                else:
                    rep.skipped.append((n, x, k, "scaled"))
                if n >= 2 * (k + 2):
                    cm = centered_ratio_moment(n, x, k)
                    row["centered"] = cm
                    if not cm <= env + tol:
                        rep.violations.append((n, x, k, "centered", cm, -np.inf, env))
                else:
                    rep.skipped.append((n, x, k, "centered"))
                rep.rows.append(row)
    return rep

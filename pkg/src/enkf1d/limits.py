"""Gaussian fluctuation limits of the EnKF variance and mean.

Q_n is the limit in law of sqrt(N)(p_n - P_n) and X_n that of
sqrt(N)(m_n - Xhat^-_n). Both are driven by independent Gaussian local
perturbations whose variances come from the exact Kalman track:

    Uhat_n = -G_n D Z,   Vhat_n = -2 G_n D (1 - G_n C) sqrt(P_n) Z' + sqrt(2) G_n**2 D**2 Z''
    U_{n+1} = B Z,       V_{n+1} = 2 A B sqrt(Phat_n) Z' + sqrt(2) R Z''
    U_0 = sqrt(P_0) Z,   V_0 = sqrt(2) P_0 Z

and the recursions

    Qhat_n = (1 - G_n C)**2 Q_n + Vhat_n,     Q_{n+1} = A**2 Qhat_n + V_{n+1},
    Xhat_n = (1 - G_n C) X_n + GG_n (Y_n - C Xhat^-_n) + Uhat_n,   X_{n+1} = A Xhat_n + U_{n+1},

with the gain fluctuation GG_n = C D**2 Q_n / (C**2 P_n + D**2)**2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import MissingKalmanTrack
from .kalman import KalmanTrack, kalman_variances
from .model import ModelParams
from .stochastic_riccati import PerturbationDraw


@dataclass(frozen=True)
class LimitNoiseParams:
    """Standard deviations of the limit perturbations, n = 0..horizon."""

    sd_U_hat: np.ndarray
    sd_V_hat: np.ndarray
    sd_U: float
    sd_V: np.ndarray  # sd_V[n] is the sd of V_n; sd_V[0] is that of V_0
    sd_U0: float
    P: np.ndarray
    P_hat: np.ndarray
    G: np.ndarray

    @property
    def horizon(self) -> int:
        return self.P.shape[0] - 1


def limit_noise_params(params: ModelParams, horizon: int) -> LimitNoiseParams:
    P, P_hat, G = kalman_variances(params, horizon)
    C, D, A, B, R = params.C, params.D, params.A, params.B, params.R
    one_minus = 1.0 - G * C
    var_V_hat = 4.0 * G ** 2 * D ** 2 * one_minus ** 2 * P + 2.0 * G ** 4 * D ** 4
    var_V = np.empty(horizon + 1)
    var_V[0] = 2.0 * params.p0 ** 2
    var_V[1:] = 4.0 * A ** 2 * B ** 2 * P_hat[:-1] + 2.0 * R ** 2
    return LimitNoiseParams(
        sd_U_hat=np.abs(G * D), sd_V_hat=np.sqrt(var_V_hat), sd_U=abs(B), sd_V=np.sqrt(var_V),
        sd_U0=math.sqrt(params.p0), P=P, P_hat=P_hat, G=G,
    )


def gain_fluctuation(params: ModelParams, Q, P):
    """GG_n = C D**2 Q_n / (C**2 P_n + D**2)**2."""
    return params.C * params.D ** 2 * np.asarray(Q) / (params.C ** 2 * np.asarray(P) + params.D ** 2) ** 2


@dataclass(frozen=True)
class LimitProcessPath:
    Q: np.ndarray
    Q_hat: np.ndarray
    X: Optional[np.ndarray] = None
    X_hat: Optional[np.ndarray] = None

    @property
    def horizon(self) -> int:
        return self.Q.shape[-1] - 1


def _simulate(params: ModelParams, horizon: int, rng: np.random.Generator, size, innovations=None):
    """Joint (Q, X) paths. Per step the draws are (Z, Z', Z'') for the update
    then (Z, Z', Z'') for the prediction, after an initial (Z_U0, Z_V0)."""
    lp = limit_noise_params(params, horizon)
    shape = () if size is None else tuple(np.atleast_1d(size))
    A, C = params.A, params.C
    G, P, P_hat = lp.G, lp.P, lp.P_hat
    Q = np.empty(shape + (horizon + 1,))
    Q_hat = np.empty_like(Q)
    X = np.empty_like(Q)
    X_hat = np.empty_like(Q)

    z_u0 = rng.standard_normal(shape)
    z_v0 = rng.standard_normal(shape)
    q = math.sqrt(2.0) * params.p0 * z_v0
    x = lp.sd_U0 * z_u0
    for n in range(horizon + 1):
        if n > 0:
            z, z2, z3 = rng.standard_normal((3,) + shape)
            V = 2.0 * A * params.B * math.sqrt(P_hat[n - 1]) * z2 + math.sqrt(2.0) * params.R * z3
            q = A ** 2 * Q_hat[..., n - 1] + V
            x = A * X_hat[..., n - 1] + params.B * z
        Q[..., n] = q
        X[..., n] = x
        z, z2, z3 = rng.standard_normal((3,) + shape)
        gD = G[n] * params.D
        one_minus = 1.0 - G[n] * C
        V_hat = -2.0 * gD * one_minus * math.sqrt(P[n]) * z2 + math.sqrt(2.0) * gD * gD * z3
        U_hat = -gD * z
        Q_hat[..., n] = one_minus ** 2 * q + V_hat
        innov = 0.0 if innovations is None else innovations[..., n]
        X_hat[..., n] = one_minus * x + gain_fluctuation(params, q, P[n]) * innov + U_hat
    return Q, Q_hat, X, X_hat


def simulate_limit_Q(params: ModelParams, horizon: int, rng: np.random.Generator, size=None) -> LimitProcessPath:
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    Q, Q_hat, _, _ = _simulate(params, horizon, rng, size)
    return LimitProcessPath(Q, Q_hat)


def simulate_limit_X(params: ModelParams, observations, horizon: int, rng: np.random.Generator, size=None,
                     kalman_track: Optional[KalmanTrack] = None) -> LimitProcessPath:
    """Joint (Q, X) limit paths along one observation record.

    The innovations Y_n - C Xhat^-_n come from ``kalman_track``; it is
    computed from ``observations`` when not given. Pass observations=None
    together with no track to get MissingKalmanTrack.
    """
    if kalman_track is None:
        if observations is None:
            raise MissingKalmanTrack("simulate_limit_X needs observations or a Kalman track")
        from .kalman import run_kalman
        kalman_track = run_kalman(params, np.asarray(observations, float)[..., : horizon + 1])
    if not isinstance(kalman_track, KalmanTrack) or kalman_track.horizon < horizon:
        raise MissingKalmanTrack("Kalman track shorter than the requested horizon")
    Y = np.asarray(observations, float)[..., : horizon + 1] if observations is not None else None
    if Y is None:
        raise MissingKalmanTrack("observations are required alongside the Kalman track")
    innov = Y - params.C * kalman_track.pred_mean[..., : horizon + 1]
    Q, Q_hat, X, X_hat = _simulate(params, horizon, rng, size, innovations=innov)
    return LimitProcessPath(Q, Q_hat, X, X_hat)


def cf_envelope(w, N: int) -> np.ndarray:
    """eps(w) = |w3| sqrt(2/N) (w2**2/2 + w3**2) exp(same)."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    t = np.abs(w[:, 2]) * math.sqrt(2.0 / N) * (w[:, 1] ** 2 / 2.0 + w[:, 2] ** 2)
    return t * np.exp(t)


@dataclass(frozen=True)
class CFGapReport:
    frequencies: np.ndarray
    gap: np.ndarray
    envelope: np.ndarray
    allowed: np.ndarray

    @property
    def ok(self) -> bool:
        return bool(np.all(self.gap <= self.allowed))

    @property
    def max_gap(self) -> float:
        return float(self.gap.max())


DEFAULT_FREQUENCIES = np.array([
    [0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 1, 1], [1, 1, 1],
    [0, 2, 1], [0, 1, 2], [1, 0, 2], [0, 0, 3],
], dtype=float)


def empirical_cf_gap(N: int, M: int, frequencies=DEFAULT_FREQUENCIES, rng: np.random.Generator | None = None,
                     batch: int = 20000) -> CFGapReport:
    """Compare the empirical CF of (mean normal, gauss, chi) with exp(-|w|**2/2)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if M < 1000:
        raise ValueError("need at least 10**3 samples")
    w = np.atleast_2d(np.asarray(frequencies, dtype=float))
    if np.any(np.linalg.norm(w, axis=1) > 5.0 + 1e-12):
        raise ValueError("frequencies must satisfy |w| <= 5")
    rng = np.random.default_rng() if rng is None else rng
    acc = np.zeros(w.shape[0], dtype=complex)
    done = 0
    while done < M:
        b = min(batch, M - done)
        d = PerturbationDraw.sample(N, rng, (b,))
        delta = np.stack([d.mean, d.gauss, d.chi], axis=-1)
        acc += np.exp(1j * delta @ w.T).sum(axis=0)
        done += b
    ecf = acc / M
    target = np.exp(-0.5 * (w ** 2).sum(axis=1))
    gap = np.abs(ecf - target)
    env = cf_envelope(w, N)
    return CFGapReport(w, gap, env, env * target + 6.0 / math.sqrt(M))

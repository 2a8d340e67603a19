"""Exact scalar Kalman filter and the deterministic stability products E_{k,n}(p)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidRange, NegativeVariance, StageMismatch
from .model import ModelParams
from .riccati import coeffs_from_model, phi_iterated

PREDICTOR = "predictor"
UPDATED = "updated"


def kalman_gain(params: ModelParams, P):
    """G = C P / (C**2 P + D**2)."""
    return params.C * P / (params.C ** 2 * P + params.D ** 2)


@dataclass(frozen=True)
class KalmanState:
    stage: str
    mean: float
    variance: float
    gain: Optional[float] = None

    def __post_init__(self):
        if self.stage not in (PREDICTOR, UPDATED):
            raise ValueError(f"unknown stage {self.stage!r}")
        if not self.variance >= 0:
            raise NegativeVariance("variance must be >= 0")


def kalman_update(params: ModelParams, state: KalmanState, y: float) -> KalmanState:
    if state.stage != PREDICTOR:
        raise StageMismatch("kalman_update expects a predictor state")
    G = kalman_gain(params, state.variance)
    mean = state.mean + G * (y - params.C * state.mean)
    # 1 - G C = 1 / (1 + S P), which avoids subtracting close numbers
    variance = state.variance / (1.0 + params.S * state.variance)
    return KalmanState(UPDATED, float(mean), float(variance), float(G))


def kalman_predict(params: ModelParams, state: KalmanState) -> KalmanState:
    if state.stage != UPDATED:
        raise StageMismatch("kalman_predict expects an updated state")
    return KalmanState(PREDICTOR, params.A * state.mean, params.A ** 2 * state.variance + params.R)


@dataclass(frozen=True)
class KalmanTrack:
    """Predictor and updated moments for n = 0..horizon.

    ``pred_mean`` and ``upd_mean`` may carry leading replicate dimensions;
    the variance and gain tracks are one-dimensional since they do not
    depend on the observations.
    """

    pred_mean: np.ndarray
    pred_var: np.ndarray
    upd_mean: np.ndarray
    upd_var: np.ndarray
    gain: np.ndarray
    params: ModelParams = field(repr=False)

    @property
    def horizon(self) -> int:
        return self.pred_var.shape[0] - 1

    def states(self) -> list[tuple[KalmanState, KalmanState]]:
        """(predictor, updated) pairs for a single observation sequence."""
        if self.pred_mean.ndim != 1:
            raise ValueError("states() needs a single observation sequence")
        return [
            (
                KalmanState(PREDICTOR, float(self.pred_mean[n]), float(self.pred_var[n])),
                KalmanState(UPDATED, float(self.upd_mean[n]), float(self.upd_var[n]), float(self.gain[n])),
            )
            for n in range(self.horizon + 1)
        ]


def kalman_variances(params: ModelParams, horizon: int, p0: float | None = None):
    """Predictor variances P_0..P_horizon, updated variances and gains."""
    P = np.empty(horizon + 1)
    P[0] = params.p0 if p0 is None else p0
    for n in range(horizon):
        P[n + 1] = params.A ** 2 * P[n] / (1.0 + params.S * P[n]) + params.R
    Phat = P / (1.0 + params.S * P)
    return P, Phat, kalman_gain(params, P)


def run_kalman(params: ModelParams, observations, x0_mean=None) -> KalmanTrack | KalmanState:
    """Run the filter over Y_0..Y_n (last axis); leading axes are replicates.

    An empty observation sequence returns only the initial predictor state.
    ``x0_mean`` overrides the initial predictor mean (may be an array
    broadcasting against the replicate dimensions).
    """
    Y = np.asarray(observations, dtype=float)
    m0 = params.x0_mean if x0_mean is None else x0_mean
    if Y.shape[-1:] == (0,) or Y.ndim == 0 and Y.size == 0:
        return KalmanState(PREDICTOR, float(m0), params.p0)
    horizon = Y.shape[-1] - 1
    P, Phat, G = kalman_variances(params, horizon)
    pm = np.empty(Y.shape)
    um = np.empty(Y.shape)
    cur = np.broadcast_to(np.asarray(m0, dtype=float), Y.shape[:-1]).copy()
    for n in range(horizon + 1):
        pm[..., n] = cur
        um[..., n] = cur + G[n] * (Y[..., n] - params.C * cur)
        cur = params.A * um[..., n]
    return KalmanTrack(pm, P, um, Phat, G, params)


def stability_product(params: ModelParams, p: float, k: int, n: int) -> float:
    """E_{k,n}(p) = prod_{k < l <= n} A / (1 + S phi^l(p)) with E_{n,n} = 1."""
    if k > n or k < 0:
        raise InvalidRange(f"need 0 <= k <= n, got k={k}, n={n}")
    if p < 0:
        raise NegativeVariance("p must be >= 0")
    coeffs = coeffs_from_model(params, PREDICTOR)
    x = phi_iterated(coeffs, p, k)
    out = 1.0
    for _ in range(k, n):
        x = (coeffs.a * x + coeffs.b) / (coeffs.c * x + coeffs.d)
        out *= params.A / (1.0 + params.S * x)
    return out


def stability_product_bound(params: ModelParams, k: int, n: int) -> float:
    return (abs(params.A) / (1.0 + params.S * params.R)) ** (n - k)


def steady_state_variance(params: ModelParams) -> float:
    """Positive fixed point P_inf of the predictor variance map."""
    return coeffs_from_model(params, PREDICTOR).fixed_point

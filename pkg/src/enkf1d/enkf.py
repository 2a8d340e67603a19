"""Vanilla perturbed-observation EnKF for the scalar model.

The ensemble holds N+1 particles along the last axis; any leading axes are
independent replicates advanced in lockstep. Random draws are consumed in a
fixed order so runs are reproducible bit-for-bit:

* ``init_ensemble``: one ``standard_normal(shape + (N+1,))`` block;
* each ``enkf_update``: one block of perturbation noises V^i;
* each ``enkf_predict``: one block of signal noises W^i.

``run_enkf`` calls them as init, update_0, predict_1, update_1, ...
The sample variance uses the 1/N normalization over N+1 particles.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import StageMismatch, TooFewParticles
from .kalman import PREDICTOR, UPDATED
from .model import ModelParams, Trajectory


def sample_stats(particles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two-pass mean and 1/N-normalized variance along the last axis."""
    n = particles.shape[-1] - 1
    mean = particles.mean(axis=-1)
    dev = particles - mean[..., None]
    return mean, np.einsum("...i,...i->...", dev, dev) / n


def ensemble_gain(params: ModelParams, p):
    return params.C * p / (params.C ** 2 * p + params.D ** 2)


@dataclass(frozen=True)
class Ensemble:
    particles: np.ndarray
    stage: str
    mean: np.ndarray
    variance: np.ndarray

    @property
    def N(self) -> int:
        return self.particles.shape[-1] - 1

    def gain(self, params: ModelParams):
        return ensemble_gain(params, self.variance)


def _make(particles: np.ndarray, stage: str) -> Ensemble:
    mean, var = sample_stats(particles)
    return Ensemble(particles, stage, mean, var)


def init_ensemble(params: ModelParams, N: int, rng: np.random.Generator, size=None,
                  noise: Optional[np.ndarray] = None) -> Ensemble:
    """N+1 i.i.d. draws of X_0; ``noise`` replaces the standard normal block."""
    if int(N) != N or N < 1:
        raise TooFewParticles(f"need N >= 1 (N+1 particles), got {N}")
    shape = () if size is None else tuple(np.atleast_1d(size))
    z = rng.standard_normal(shape + (int(N) + 1,)) if noise is None else np.asarray(noise, float)
    return _make(params.x0_mean + np.sqrt(params.p0) * z, PREDICTOR)


def enkf_update(params: ModelParams, ens: Ensemble, y, rng: np.random.Generator,
                noise: Optional[np.ndarray] = None) -> Ensemble:
    """Perturbed-observation correction with gain from the predictor variance."""
    if ens.stage != PREDICTOR:
        raise StageMismatch("enkf_update expects a predictor ensemble")
    V = rng.standard_normal(ens.particles.shape) if noise is None else np.asarray(noise, float)
    g = ens.gain(params)[..., None]
    y = np.asarray(y, dtype=float)[..., None]
    upd = ens.particles + g * (y - (params.C * ens.particles + params.D * V))
    return _make(upd, UPDATED)


def enkf_predict(params: ModelParams, ens: Ensemble, rng: np.random.Generator,
                 noise: Optional[np.ndarray] = None) -> Ensemble:
    if ens.stage != UPDATED:
        raise StageMismatch("enkf_predict expects an updated ensemble")
    W = rng.standard_normal(ens.particles.shape) if noise is None else np.asarray(noise, float)
    return _make(params.A * ens.particles + params.B * W, PREDICTOR)


@dataclass(frozen=True)
class EnKFRecord:
    """Per-step statistics, time on the last axis (n = 0..horizon).

    ``tracking_error`` is M_n = m_n - X_n. When noise logging is on,
    ``init_noise`` has shape (..., N+1), and ``obs_noise[n]`` /
    ``signal_noise[n]`` hold the particle noises of update n and of the
    prediction into step n (``signal_noise[0]`` is unused and zero).
    """

    m: np.ndarray
    p: np.ndarray
    g: np.ndarray
    m_hat: np.ndarray
    p_hat: np.ndarray
    tracking_error: np.ndarray
    N: int
    init_noise: Optional[np.ndarray] = None
    obs_noise: Optional[np.ndarray] = None
    signal_noise: Optional[np.ndarray] = None

    @property
    def horizon(self) -> int:
        return self.p.shape[-1] - 1

    @property
    def logged(self) -> bool:
        return self.obs_noise is not None


def run_enkf(params: ModelParams, trajectory: Trajectory, N: int, rng: np.random.Generator,
             log_noise: bool = False) -> EnKFRecord:
    """Filter the trajectory's observations; its leading dims are replicates."""
    X, Y = trajectory.states, trajectory.observations
    shape, horizon = Y.shape[:-1], Y.shape[-1] - 1
    out = {k: np.empty(shape + (horizon + 1,)) for k in ("m", "p", "g", "m_hat", "p_hat")}
    logs = None
    if log_noise:
        logs = (np.empty((horizon + 1,) + shape + (N + 1,)), np.zeros((horizon + 1,) + shape + (N + 1,)))

    if int(N) != N or N < 1:
        raise TooFewParticles(f"need N >= 1 (N+1 particles), got {N}")
    N = int(N)
    z0 = rng.standard_normal(shape + (N + 1,))
    ens = init_ensemble(params, N, rng, noise=z0)
    for n in range(horizon + 1):
        if n > 0:
            W = rng.standard_normal(ens.particles.shape)
            if logs is not None:
                logs[1][n] = W
            ens = enkf_predict(params, ens, rng, noise=W)
        out["m"][..., n] = ens.mean
        out["p"][..., n] = ens.variance
        out["g"][..., n] = ens.gain(params)
        V = rng.standard_normal(ens.particles.shape)
        if logs is not None:
            logs[0][n] = V
        ens = enkf_update(params, ens, Y[..., n], rng, noise=V)
        out["m_hat"][..., n] = ens.mean
        out["p_hat"][..., n] = ens.variance
    return EnKFRecord(
        tracking_error=out["m"] - X, N=N, init_noise=z0 if log_noise else None,
        obs_noise=None if logs is None else logs[0],
        signal_noise=None if logs is None else logs[1], **out,
    )


def tracking_error_replay(params: ModelParams, record: EnKFRecord, trajectory: Trajectory) -> np.ndarray:
    """Rebuild M_n from M_{n+1} = A/(1+S p_n) M_n + Upsilon_{n+1} using logged noises."""
    if not record.logged:
        from .errors import HookDisabled
        raise HookDisabled("tracking_error_replay needs a run with log_noise=True")
    A, B, D = params.A, params.B, params.D
    sq = np.sqrt(record.N + 1)
    M = np.empty_like(record.tracking_error)
    M[..., 0] = record.tracking_error[..., 0]
    V, W = trajectory.obs_noise, trajectory.signal_noise
    for n in range(record.horizon):
        g, p = record.g[..., n], record.p[..., n]
        ups_hat = -g * D * sq * record.obs_noise[n].mean(axis=-1)
        ups = B * sq * record.signal_noise[n + 1].mean(axis=-1)
        Upsilon = A * g * D * V[..., n] - B * W[..., n + 1] + (A * ups_hat + ups) / sq
        M[..., n + 1] = A / (1.0 + params.S * p) * M[..., n] + Upsilon
    return M

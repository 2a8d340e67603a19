"""Scalar time-homogeneous linear-Gaussian filtering model.

    X_{n+1} = A X_n + B W_{n+1}
    Y_n     = C X_n + D V_n

with X_0 ~ Normal(x0_mean, p0) and i.i.d. standard normal (V_n, W_{n+1}).

Gaussian sampling uses ``numpy.random.Generator.standard_normal`` (ziggurat
method on PCG64 by default). A trajectory consumes its draws in one fixed
order: the initial standardized draw Z_0 (shape ``size``), then the whole
observation-noise block V_0..V_n, then the signal-noise block W_1..W_n.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NegativeVariance, ZeroParameter


@dataclass(frozen=True)
class ModelParams:
    A: float
    B: float
    C: float
    D: float
    x0_mean: float = 0.0
    p0: float = 1.0

    def __post_init__(self):
        for name in ("A", "B", "C", "D"):
            value = float(getattr(self, name))
            if value == 0.0:
                raise ZeroParameter(
                    f"model parameter {name} must be nonzero (A, B, C, D are all required to be nonzero)"
                )
            object.__setattr__(self, name, value)
        object.__setattr__(self, "x0_mean", float(self.x0_mean))
        p0 = float(self.p0)
        if not p0 >= 0.0:
            raise NegativeVariance(f"initial variance p0 must be >= 0, got {p0}")
        object.__setattr__(self, "p0", p0)

    @property
    def R(self) -> float:
        """Signal noise variance B**2."""
        return self.B * self.B

    @property
    def S(self) -> float:
        """Observation signal-to-noise ratio (C/D)**2."""
        return (self.C / self.D) ** 2

    def replace(self, **changes) -> "ModelParams":
        fields = dict(A=self.A, B=self.B, C=self.C, D=self.D, x0_mean=self.x0_mean, p0=self.p0)
        fields.update(changes)
        return ModelParams(**fields)

    def as_dict(self) -> dict:
        return dict(A=self.A, B=self.B, C=self.C, D=self.D, x0_mean=self.x0_mean, p0=self.p0)


def new_model(A, B, C, D, x0_mean=0.0, p0=1.0) -> ModelParams:
    return ModelParams(A, B, C, D, x0_mean, p0)


@dataclass(frozen=True)
class Trajectory:
    """Signal and sensor values X_0..X_n, Y_0..Y_n.

    ``obs_noise[..., k]`` is V_k and ``signal_noise[..., k]`` is W_k for
    k >= 1; ``signal_noise[..., 0]`` holds the standardized initial draw.
    Arrays may carry leading replicate dimensions.
    """

    states: np.ndarray
    observations: np.ndarray
    obs_noise: np.ndarray
    signal_noise: np.ndarray

    @property
    def horizon(self) -> int:
        return self.states.shape[-1] - 1


def simulate_trajectory(params: ModelParams, horizon: int, rng: np.random.Generator, size=None) -> Trajectory:
    """Simulate (X, Y) up to ``horizon``; ``size`` adds leading replicate dims."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    shape = () if size is None else tuple(np.atleast_1d(size))
    z0 = rng.standard_normal(shape)
    V = rng.standard_normal(shape + (horizon + 1,))
    W = rng.standard_normal(shape + (horizon,))

    X = np.empty(shape + (horizon + 1,))
    X[..., 0] = params.x0_mean + np.sqrt(params.p0) * z0
    for n in range(horizon):
        X[..., n + 1] = params.A * X[..., n] + params.B * W[..., n]
    Y = params.C * X + params.D * V
    signal_noise = np.concatenate([z0[..., None], W], axis=-1)
    return Trajectory(states=X, observations=Y, obs_noise=V, signal_noise=signal_noise)


def signal_moments(params: ModelParams, n: int) -> tuple[float, float]:
    """Exact mean and variance of X_n."""
    A2 = params.A ** 2
    mean = params.A ** n * params.x0_mean
    var = A2 ** n * params.p0 + params.R * sum(A2 ** k for k in range(n))
    return mean, var

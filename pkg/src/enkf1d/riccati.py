"""Scalar Riccati rational difference equation phi(x) = (a x + b) / (c x + d).

The map is a Moebius transform with positive determinant, so its n-fold
composition has a closed form in terms of the two characteristic roots
lambda1 < lambda2 of t**2 - (u + v) t + (u v - w), where
(u, v, w) = (a/c, d/c, b/c).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import NegativeInput
from .model import ModelParams

MAX_POWER = 32


def _check_nonneg(p):
    arr = np.asarray(p, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise NegativeInput("variance argument must be >= 0")
    return arr


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class RiccatiCoeffs:
    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("Riccati coefficient c must be > 0")
        if not self.rho > 0:
            raise ValueError("Riccati determinant ad - bc must be > 0")

    @property
    def rho(self) -> float:
        return self.a * self.d - self.b * self.c

    @property
    def u(self) -> float:
        return self.a / self.c

    @property
    def v(self) -> float:
        return self.d / self.c

    @property
    def w(self) -> float:
        return self.b / self.c

    @cached_property
    def _roots(self):
        half = (self.v - self.u) / 2.0
        s = math.sqrt(half * half + self.w)
        # one of (-half + s), (half + s) cancels; recover it from their product w
        big = abs(half) + s
        small = self.w / big if big > 0 else 0.0
        if half >= 0:
            v_minus_l1, l2_minus_v = big, small
        else:
            v_minus_l1, l2_minus_v = small, big
        return s, v_minus_l1, l2_minus_v

    @property
    def sqrt_disc(self) -> float:
        return self._roots[0]

    @property
    def v_minus_lambda1(self) -> float:
        return self._roots[1]

    @property
    def lambda2(self) -> float:
        return self.v + self._roots[2]

    @property
    def lambda1(self) -> float:
        # product of the roots is uv - w = rho / c**2
        return (self.rho / self.c ** 2) / self.lambda2

    @property
    def lambda_gap(self) -> float:
        """lambda2 - lambda1 = 2 sqrt(((v - u) / 2)**2 + w)."""
        return 2.0 * self._roots[0]

    @property
    def lam(self) -> float:
        """Contraction ratio lambda1 / lambda2 in (0, 1)."""
        return self.rho / (self.c * self.lambda2) ** 2

    @property
    def fixed_point(self) -> float:
        return self._roots[2]

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.a, self.b, self.c, self.d)


def coeffs_from_model(params: ModelParams, stage: str = "predictor") -> RiccatiCoeffs:
    A2, R, S = params.A ** 2, params.R, params.S
    if stage == "predictor":
        return RiccatiCoeffs(A2 + R * S, R, S, 1.0)
    if stage == "updated":
        return RiccatiCoeffs(A2, R, A2 * S, 1.0 + S * R)
    raise ValueError(f"unknown stage {stage!r}; expected 'predictor' or 'updated'")


def phi(coeffs: RiccatiCoeffs, p):
    x = _check_nonneg(p)
    return _out((coeffs.a * x + coeffs.b) / (coeffs.c * x + coeffs.d))


def phi_iterated(coeffs: RiccatiCoeffs, p, n: int):
    """n-fold composition by direct iteration (reference path)."""
    x = _check_nonneg(p)
    for _ in range(n):
        x = (coeffs.a * x + coeffs.b) / (coeffs.c * x + coeffs.d)
    return _out(x)


def _denominator(coeffs: RiccatiCoeffs, x, n):
    lam_n = coeffs.lam ** n
    return (x + coeffs.v_minus_lambda1) * (1.0 - lam_n) + coeffs.lambda_gap * lam_n


def phi_n_closed_form(coeffs: RiccatiCoeffs, p, n: int):
    if n < 0:
        raise ValueError("n must be >= 0")
    x = _check_nonneg(p)
    if n == 0:
        return _out(x.copy() if x.ndim else x)
    r = coeffs.fixed_point
    lam_n = coeffs.lam ** n
    with np.errstate(over="raise", invalid="raise"):
        out = r + (x - r) * coeffs.lambda_gap * lam_n / _denominator(coeffs, x, n)
    return _out(out)


def fixed_point(coeffs: RiccatiCoeffs) -> float:
    return coeffs.fixed_point


def d_phi_n(coeffs: RiccatiCoeffs, p, n: int):
    """Derivative of the n-fold map at p."""
    if n < 0:
        raise ValueError("n must be >= 0")
    x = _check_nonneg(p)
    if n == 0:
        return _out(np.ones_like(x))
    return _out(coeffs.lambda_gap ** 2 * coeffs.lam ** n / _denominator(coeffs, x, n) ** 2)


def d_phi_n_product(coeffs: RiccatiCoeffs, p, n: int):
    """Same derivative via the chain rule prod_k rho / (c phi^k(p) + d)**2."""
    x = _check_nonneg(p)
    out = np.ones_like(x)
    for _ in range(n):
        out = out * coeffs.rho / (coeffs.c * x + coeffs.d) ** 2
        x = (coeffs.a * x + coeffs.b) / (coeffs.c * x + coeffs.d)
    return _out(out)


def contraction_bound(coeffs: RiccatiCoeffs, n: int) -> float:
    """Lipschitz constant of phi^n on [0, inf): ((l2 - l1)/(v - l1))**2 * lam**n."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return (coeffs.lambda_gap / coeffs.v_minus_lambda1) ** 2 * coeffs.lam ** n


def second_order_constant(coeffs: RiccatiCoeffs) -> float:
    return coeffs.lambda_gap ** 2 / coeffs.v_minus_lambda1 ** 3


def comparison_map_epsilon(coeffs: RiccatiCoeffs, eps: float) -> RiccatiCoeffs:
    """Coefficients of phi(x) + eps."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    return RiccatiCoeffs(coeffs.a + eps * coeffs.c, coeffs.b + eps * coeffs.d, coeffs.c, coeffs.d)


def comparison_map_power(coeffs: RiccatiCoeffs, k: int) -> RiccatiCoeffs:
    """Coefficients of phi_k with phi(x)**k <= phi_k(x**k)."""
    if int(k) != k or k < 1:
        raise ValueError("k must be an integer >= 1")
    if k > MAX_POWER:
        raise ValueError(f"k must be <= {MAX_POWER}")
    k = int(k)
    scale = 2.0 ** (k - 1)
    # b enters as b**k: (ax+b)^k <= 2^(k-1)(a^k x^k + b^k) and (cx+d)^k >= c^k x^k + d^k
    return RiccatiCoeffs(scale * coeffs.a ** k, scale * coeffs.b ** k, coeffs.c ** k, coeffs.d ** k)

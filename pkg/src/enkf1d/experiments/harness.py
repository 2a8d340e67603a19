"""Replicate blocks, random substreams and the statistics used by verdicts.

Replicates are processed in blocks. Block ``b`` of a stream named ``tag``
draws from ``SeedSequence(seed, spawn_key=(crc32(tag), b))``, so a result
depends only on (seed, tag, block size, replicate count) and never on how
blocks are scheduled across workers. Reduction is in block order.
"""
from __future__ import annotations

import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from ..errors import InsufficientData


def block_rng(seed: int, tag: str, block: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(tag.encode()), int(block)))
    return np.random.default_rng(ss)


def block_sizes(total: int, block_size: int) -> list[int]:
    if total < 1:
        raise ValueError("need at least one replicate")
    full, rest = divmod(int(total), int(block_size))
    return [int(block_size)] * full + ([rest] if rest else [])


def _run_block(fn, seed, tag, item):
    index, size = item
    return fn(block_rng(seed, tag, index), size)


def run_blocks(fn: Callable, total: int, seed: int, tag: str, block_size: int = 1000, workers: int = 1,
               **kwargs) -> list:
    """Call ``fn(rng, size, **kwargs)`` on every block and return outputs in block order.

    ``fn`` must be a module-level function when ``workers > 1``.
    """
    items = list(enumerate(block_sizes(total, block_size)))
    task = partial(_run_block, partial(fn, **kwargs) if kwargs else fn, seed, tag)
    if workers <= 1 or len(items) == 1:
        return [task(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(task, items))


def concat_blocks(outputs: list, axis: int = 0):
    """Concatenate block outputs; tuples and dicts are concatenated field-wise."""
    first = outputs[0]
    if isinstance(first, dict):
        return {k: np.concatenate([o[k] for o in outputs], axis=axis) for k in first}
    if isinstance(first, tuple):
        return tuple(np.concatenate([o[i] for o in outputs], axis=axis) for i in range(len(first)))
    return np.concatenate(outputs, axis=axis)


# --- statistics -------------------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    estimate: float
    stderr: float

    def ci(self, level: float = 0.99, sided: str = "two") -> tuple[float, float]:
        if sided == "two":
            z = stats.norm.ppf(0.5 + level / 2)
            return self.estimate - z * self.stderr, self.estimate + z * self.stderr
        z = stats.norm.ppf(level)
        if sided == "lower":
            return self.estimate - z * self.stderr, math.inf
        return -math.inf, self.estimate + z * self.stderr


def mean_estimate(x, axis=0) -> Estimate:
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    if n < 2:
        raise InsufficientData("need at least two samples")
    return Estimate(float(x.mean(axis=axis)), float(x.std(axis=axis, ddof=1) / math.sqrt(n)))


def rmse_estimate(err) -> Estimate:
    """Root mean square with a delta-method standard error."""
    sq = mean_estimate(np.asarray(err, dtype=float) ** 2)
    r = math.sqrt(sq.estimate)
    return Estimate(r, sq.stderr / (2 * r) if r > 0 else 0.0)


def lp_estimate(err, power: int = 4) -> Estimate:
    m = mean_estimate(np.abs(np.asarray(err, dtype=float)) ** power)
    v = m.estimate ** (1.0 / power)
    return Estimate(v, m.stderr * v / (power * m.estimate) if m.estimate > 0 else 0.0)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    ci_lo: float
    ci_hi: float
    stderr: float


def fit_loglog_slope(x, y, y_se=None, rng: np.random.Generator | None = None, n_boot: int = 2000,
                     level: float = 0.99, log_x: bool = True) -> SlopeFit:
    """OLS slope of log y against log x (or x when ``log_x`` is False).

    With ``y_se`` the CI comes from a parametric bootstrap that redraws each
    log y from Normal(log y, y_se / y); otherwise from the OLS t-interval.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3 or x.size != y.size:
        raise InsufficientData("need at least three (x, y) points")
    if np.any(y <= 0) or (log_x and np.any(x <= 0)):
        raise InsufficientData("log-log fit needs positive values")
    lx = np.log(x) if log_x else x
    ly = np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    if y_se is not None:
        rng = np.random.default_rng(0) if rng is None else rng
        sd = np.asarray(y_se, dtype=float) / y
        sims = ly + sd * rng.standard_normal((n_boot, ly.size))
        xc = lx - lx.mean()
        boot = (sims - sims.mean(axis=1, keepdims=True)) @ xc / (xc @ xc)
        lo, hi = np.quantile(boot, [(1 - level) / 2, (1 + level) / 2])
        se = float(boot.std(ddof=1))
    else:
        res = ly - (slope * lx + intercept)
        dof = lx.size - 2
        s2 = res @ res / dof if dof > 0 else 0.0
        se = math.sqrt(s2 / ((lx - lx.mean()) ** 2).sum())
        t = stats.t.ppf((1 + level) / 2, dof) if dof > 0 else 0.0
        lo, hi = slope - t * se, slope + t * se
    return SlopeFit(float(slope), float(intercept), float(lo), float(hi), float(se))


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float


def ks_two_sample(a, b, min_size: int = 100) -> KSResult:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size < min_size or b.size < min_size:
        raise InsufficientData(f"KS test needs at least {min_size} samples per side")
    r = stats.ks_2samp(a, b)
    return KSResult(float(r.statistic), float(r.pvalue))


def wasserstein1_empirical(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise InsufficientData("empty sample")
    return float(stats.wasserstein_distance(a, b))


SLICE_ANGLES = np.linspace(0.0, np.pi, 16, endpoint=False)


def sliced_wasserstein1(a: np.ndarray, b: np.ndarray, angles: Sequence[float] = SLICE_ANGLES) -> float:
    """Average W1 of one-dimensional projections of two planar samples."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return float(np.mean([wasserstein1_empirical(a @ d, b @ d) for d in dirs]))


def skewness_estimate(x) -> Estimate:
    x = np.asarray(x, dtype=float)
    n = x.size
    return Estimate(float(stats.skew(x)), math.sqrt(6.0 * (n - 2) / ((n + 1) * (n + 3))))

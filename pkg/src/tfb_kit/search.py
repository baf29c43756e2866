"""Choosing sigma_q: bisection under a performance-change tolerance, or grid + interpolation."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .adapter import Posterior, PosteriorFamily
from .data import Dataset
from .metrics import MetricKind, evaluate
from .netcore import Network

log = logging.getLogger(__name__)

DEFAULT_RELATIVE_EPS = {MetricKind.NLL: 0.003, MetricKind.ACC: 0.01}
DEFAULT_GRID = (0.01, 0.015, 0.02, 0.025, 0.03, 0.035, 0.04, 0.05)


class ToleranceMode(str, Enum):
    RELATIVE = "relative"
    ABSOLUTE = "absolute"


@dataclass(frozen=True)
class SearchConfig:
    metric: MetricKind = MetricKind.NLL
    tolerance_mode: ToleranceMode = ToleranceMode.RELATIVE
    epsilon: float | None = None  # None -> per-metric default fraction
    bracket_lo: float = 0.001
    bracket_hi: float = 0.015
    max_rounds: int = 5
    mc_samples: int = 10
    seed: int = 0
    family: PosteriorFamily = PosteriorFamily.LOW_RANK_ISOTROPIC

    def __post_init__(self):
        object.__setattr__(self, "metric", MetricKind(self.metric))
        object.__setattr__(self, "tolerance_mode", ToleranceMode(self.tolerance_mode))
        object.__setattr__(self, "family", PosteriorFamily(self.family))
        if self.epsilon is None:
            object.__setattr__(self, "epsilon", DEFAULT_RELATIVE_EPS.get(self.metric, 0.003))
        if not 0 <= self.bracket_lo < self.bracket_hi:
            raise ValueError("need 0 <= bracket_lo < bracket_hi")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")

    def resolve_epsilon(self, p0: float) -> float:
        if self.tolerance_mode is ToleranceMode.RELATIVE:
            return self.epsilon * abs(p0)
        return self.epsilon


@dataclass(frozen=True)
class Probe:
    sigma_q: float
    value: float
    accepted: bool
    lo: float  # bracket after this round
    hi: float
    width: float  # exactly (bracket_hi - bracket_lo) / 2**round


@dataclass
class SearchTrace:
    p0: float
    epsilon_abs: float
    probes: list[Probe] = field(default_factory=list)
    result_sigma: float = 0.0
    none_accepted: bool = False


def binary_search(metric: Callable[[float], float], p0: float, cfg: SearchConfig) -> SearchTrace:
    """Bisection on ``[bracket_lo, bracket_hi]`` for ``max_rounds`` rounds.

    A probe is accepted when ``|l(sigma) - p0| < eps`` (strict); accepted
    probes raise the lower bound, rejected ones lower the upper bound. The
    result is the final lower bound.
    """
    if not np.isfinite(p0):
        raise FloatingPointError(f"baseline metric is not finite ({p0})")
    eps = cfg.resolve_epsilon(p0)
    trace = SearchTrace(p0=p0, epsilon_abs=eps)
    # the bracket is kept as (lo, width); halving the width is exact in binary
    lo, width = cfg.bracket_lo, cfg.bracket_hi - cfg.bracket_lo
    for _ in range(cfg.max_rounds):
        width /= 2
        sigma = lo + width
        p = float(metric(sigma))
        ok = bool(np.isfinite(p) and abs(p - p0) < eps)
        if ok:
            lo = sigma
        trace.probes.append(Probe(sigma, p, ok, lo, lo + width, width))
        log.debug("sigma=%.6g metric=%.6g accepted=%s", sigma, p, ok)
    trace.result_sigma = lo
    trace.none_accepted = not any(pr.accepted for pr in trace.probes)
    return trace


def _metric_fn(net: Network, posterior: Posterior, anchor: Dataset, cfg: SearchConfig) -> Callable[[float], float]:
    base = posterior.with_family(cfg.family)

    def metric(sigma: float) -> float:
        return evaluate(net, base.with_sigma(sigma), anchor, cfg.metric, cfg.mc_samples, cfg.seed).value

    return metric


def baseline(net: Network, anchor: Dataset, cfg: SearchConfig) -> float:
    if len(anchor) == 0:
        raise ValueError("anchor dataset is empty")
    return evaluate(net, None, anchor, cfg.metric).value


def binary_search_sigma(posterior: Posterior, net: Network, anchor: Dataset, cfg: SearchConfig) -> SearchTrace:
    """Run the bisection with the anchor-set metric of the Bayesianized network."""
    p0 = baseline(net, anchor, cfg)
    return binary_search(_metric_fn(net, posterior, anchor, cfg), p0, cfg)


@dataclass
class GridTable:
    sigmas: list[float]
    values: list[float]
    p0: float
    target: float
    clamped: bool


def interpolate_sigma(
    sigmas: Sequence[float], values: Sequence[float], target: float, higher_is_worse: bool = True
) -> tuple[float, bool]:
    """Piecewise-linear inverse of the observed metric curve at ``target``.

    Walks the grid upward and interpolates on the first segment where the
    metric passes ``target`` in the degrading direction. Returns
    ``(sigma, clamped)``; clamping to the grid ends happens when the curve
    never reaches the target or starts beyond it.
    """
    s = np.asarray(sigmas, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if s.size < 2 or np.any(np.diff(s) <= 0):
        raise ValueError("grid must be strictly ascending with at least two points")
    sign = 1.0 if higher_is_worse else -1.0
    excess = sign * (v - target)  # > 0 means past the tolerance
    if excess[0] > 0:
        return float(s[0]), True
    for k in range(1, s.size):
        if excess[k] > 0:
            t = (target - v[k - 1]) / (v[k] - v[k - 1])
            return float(s[k - 1] + t * (s[k] - s[k - 1])), False
    return float(s[-1]), bool(excess[-1] < 0)


def _worker_count() -> int:
    n = int(os.environ.get("TFB_KIT_THREADS", "0") or 0)
    return n if n > 0 else (os.cpu_count() or 1)


def grid_interpolated_sigma(
    posterior: Posterior,
    net: Network,
    anchor: Dataset,
    grid: Sequence[float],
    target_drop: float | None,
    cfg: SearchConfig,
) -> tuple[float, GridTable]:
    """Evaluate every grid point (in parallel) and interpolate the sigma hitting ``p0 +/- eps``.

    ``target_drop`` is the absolute tolerance; ``None`` resolves it from ``cfg``.
    """
    p0 = baseline(net, anchor, cfg)
    metric = _metric_fn(net, posterior, anchor, cfg)
    return grid_search(metric, p0, grid, target_drop, cfg)


def grid_search(
    metric: Callable[[float], float],
    p0: float,
    grid: Sequence[float],
    target_drop: float | None,
    cfg: SearchConfig,
) -> tuple[float, GridTable]:
    grid = [float(g) for g in grid]
    if len(grid) < 2 or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be sorted ascending with at least two points")
    eps = cfg.resolve_epsilon(p0) if target_drop is None else float(target_drop)
    with ThreadPoolExecutor(max_workers=min(_worker_count(), len(grid))) as pool:
        values = list(pool.map(metric, grid))
    target = p0 + eps if cfg.metric.higher_is_worse else p0 - eps
    sigma, clamped = interpolate_sigma(grid, values, target, cfg.metric.higher_is_worse)
    if clamped:
        log.warning("grid target %.6g outside observed metric range; sigma clamped to %.6g", target, sigma)
    return sigma, GridTable(grid, [float(v) for v in values], p0, target, clamped)

"""Monte-Carlo prediction with Bayesianized adapters."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .adapter import Posterior, PosteriorFamily
from .metrics import pairwise_mean
from .netcore import Network, Task, apply_layer, forward, regroup, softmax


class Mode(str, Enum):
    FULL_MODEL = "full"
    LAST_LAYER_ONLY = "last_layer"


@dataclass(frozen=True)
class PredictionConfig:
    mc_samples: int = 10
    seed: int = 0
    family: PosteriorFamily | None = None  # None keeps the posterior's own family
    mode: Mode = Mode.FULL_MODEL

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.family is not None:
            object.__setattr__(self, "family", PosteriorFamily(self.family))
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")


@dataclass
class PredictiveSummary:
    mean: np.ndarray  # inputs x out: mean output, or averaged class probabilities
    std: np.ndarray  # inputs x out, population std over samples
    probabilities: np.ndarray | None  # classification only
    samples: np.ndarray  # mc_samples x inputs x out, raw outputs (probabilities for classification)
    prefix_evaluations: int = 0  # per-input passes through the layers before the noisy one


def _setup(net: Network, posterior: Posterior, cfg: PredictionConfig) -> tuple[Network, Posterior, list[int]]:
    if not posterior.adapters:
        raise ValueError("posterior has no adapted layers")
    if cfg.family is not None:
        posterior = posterior.with_family(cfg.family)
    layers = sorted(posterior.adapters)
    if cfg.mode is Mode.LAST_LAYER_ONLY:
        layers = layers[-1:]
    return regroup(net, posterior), posterior, layers


def _summarize(net: Network, raw: np.ndarray, prefix_evals: int) -> PredictiveSummary:
    if net.task is Task.CLASSIFICATION:
        raw = softmax(raw)
    # shifted by the first draw so identical draws give an exact mean and zero std
    mean = raw[0] + pairwise_mean(raw - raw[0])
    std = np.sqrt(pairwise_mean((raw - mean) ** 2))
    probs = mean if net.task is Task.CLASSIFICATION else None
    return PredictiveSummary(mean, std, probs, raw, prefix_evals)


def mc_predict(net: Network, posterior: Posterior, inputs, cfg: PredictionConfig = PredictionConfig()) -> PredictiveSummary:
    """Average ``mc_samples`` stochastic forward passes.

    In last-layer mode only the final Bayesianized layer receives noise and
    every sample still runs the full network (the naive path).
    """
    model, posterior, layers = _setup(net, posterior, cfg)
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("no inputs")
    raw = np.stack([forward(model, x, posterior.noise_plan(cfg.seed, k, layers)) for k in range(cfg.mc_samples)])
    return _summarize(model, raw, x.shape[0] * cfg.mc_samples)


def last_layer_fast_predict(
    net: Network, posterior: Posterior, inputs, cfg: PredictionConfig = PredictionConfig(mode=Mode.LAST_LAYER_ONLY)
) -> PredictiveSummary:
    """Last-layer prediction that runs the deterministic prefix once per input."""
    if cfg.mode is not Mode.LAST_LAYER_ONLY:
        raise ValueError("fast path requires last-layer mode")
    last = len(net.layers) - 1
    if last not in posterior.adapters:
        raise ValueError("final layer is not Bayesianized")
    model, posterior, layers = _setup(net, posterior, cfg)
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("no inputs")
    h = x
    for layer in model.layers[:last]:
        h = apply_layer(layer, h)
    raw = np.stack(
        [
            apply_layer(model.layers[last], h, posterior.noise_plan(cfg.seed, k, layers)[last])
            for k in range(cfg.mc_samples)
        ]
    )
    return _summarize(model, raw, x.shape[0])


@dataclass
class BandRow:
    x: float
    mean: float
    lo: float
    hi: float


def prediction_band(net: Network, posterior: Posterior, x_grid, cfg: PredictionConfig = PredictionConfig()) -> list[BandRow]:
    """Mean and +/- one std of the sampled outputs at each grid point (1-D regression)."""
    if net.task is not Task.REGRESSION:
        raise ValueError("prediction bands are for regression networks")
    xs = np.asarray(x_grid, dtype=np.float64).reshape(-1)
    summary = mc_predict(net, posterior, xs[:, None], cfg)
    mean, std = summary.mean[:, 0], summary.std[:, 0]
    return [BandRow(float(x), float(m), float(m - s), float(m + s)) for x, m, s in zip(xs, mean, std)]

"""NLL, ECE, accuracy, embedding norm and MSE, deterministic or Monte-Carlo."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .adapter import Posterior
from .data import Dataset, argmax_lowest
from .netcore import Network, Task, embed, forward, regroup, softmax

PROB_FLOOR = 1e-12
ECE_BINS = 15


class MetricKind(str, Enum):
    NLL = "nll"
    ACC = "acc"
    ECE = "ece"
    EMBEDDING_NORM = "embedding_norm"
    MSE = "mse"

    @property
    def higher_is_worse(self) -> bool:
        return self is not MetricKind.ACC


class Convention(str, Enum):
    # metric of the MC-averaged predictive (default) vs MC-average of per-sample metrics
    PREDICTIVE = "predictive"
    EXPECTED_METRIC = "expected_metric"


@dataclass(frozen=True)
class BinStat:
    accuracy: float
    confidence: float
    count: int


@dataclass(frozen=True)
class MetricReport:
    kind: MetricKind
    value: float
    sample_count: int
    bin_detail: tuple[BinStat, ...] | None = None


def pairwise_sum(values, axis: int = 0) -> np.ndarray:
    """Fixed-order pairwise tree sum along ``axis``.

    The pairing depends only on the length, so the result is identical for
    any partitioning of upstream work.
    """
    v = np.moveaxis(np.asarray(values, dtype=np.float64), axis, 0)
    if v.shape[0] == 0:
        return np.zeros(v.shape[1:])
    while v.shape[0] > 1:
        half = v.shape[0] // 2
        paired = v[:half] + v[half : 2 * half]
        v = np.concatenate([paired, v[2 * half :]]) if v.shape[0] % 2 else paired
    return v[0]


def pairwise_mean(values, axis: int = 0) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return pairwise_sum(v, axis) / v.shape[axis]


def nll(probabilities) -> float:
    """Mean ``-log p`` of the probabilities given to the true class (floored at 1e-12)."""
    p = np.asarray(probabilities, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise ValueError("nll needs at least one probability")
    if np.any(~(p > 0)) or np.any(p > 1.0 + 1e-12):
        raise ValueError("probabilities must lie in (0, 1]")
    return float(pairwise_mean(-np.log(np.maximum(p, PROB_FLOOR))))


def accuracy(predicted, labels) -> float:
    predicted, labels = np.asarray(predicted), np.asarray(labels)
    if predicted.shape != labels.shape:
        raise ValueError("length mismatch")
    return float(np.mean(predicted == labels))


def ece_bin_index(confidences: np.ndarray, bins: int = ECE_BINS) -> np.ndarray:
    """Bin ``m`` covers ``(m/bins, (m+1)/bins]``; a confidence of exactly 0 goes to bin 0."""
    edges = np.arange(bins + 1, dtype=np.float64) / bins
    idx = np.searchsorted(edges, confidences, side="left") - 1
    return np.clip(idx, 0, bins - 1)


def ece(confidences, correct, bins: int = ECE_BINS) -> MetricReport:
    conf = np.asarray(confidences, dtype=np.float64).reshape(-1)
    corr = np.asarray(correct, dtype=bool).reshape(-1)
    if conf.shape != corr.shape:
        raise ValueError(f"length mismatch: {conf.size} confidences, {corr.size} flags")
    if np.any((conf < 0) | (conf > 1)):
        raise ValueError("confidences must lie in [0, 1]")
    n = conf.size
    idx = ece_bin_index(conf, bins)
    detail = []
    total = 0.0
    for m in range(bins):
        mask = idx == m
        count = int(mask.sum())
        if count == 0:
            detail.append(BinStat(0.0, 0.0, 0))
            continue
        acc_m = float(corr[mask].sum()) / count
        conf_m = float(pairwise_sum(conf[mask])) / count
        detail.append(BinStat(acc_m, conf_m, count))
        total += count / n * abs(acc_m - conf_m)
    return MetricReport(MetricKind.ECE, float(total), 0, tuple(detail))


def _classification_report(kind: MetricKind, probs: np.ndarray, labels: np.ndarray, samples: int) -> MetricReport:
    if kind is MetricKind.NLL:
        p_true = probs[np.arange(len(labels)), labels]
        return MetricReport(kind, nll(np.maximum(p_true, PROB_FLOOR)), samples)
    pred = argmax_lowest(probs)
    if kind is MetricKind.ACC:
        return MetricReport(kind, accuracy(pred, labels), samples)
    rep = ece(probs.max(axis=-1), pred == labels)
    return MetricReport(kind, rep.value, samples, rep.bin_detail)


def _check_compatible(net: Network, dataset: Dataset, kind: MetricKind) -> None:
    if kind is MetricKind.EMBEDDING_NORM:
        return
    if not dataset.labeled:
        raise ValueError(f"{kind.value} needs labels (or pseudo-labels)")
    if kind is MetricKind.MSE:
        if net.task is not Task.REGRESSION:
            raise ValueError("MSE is defined for regression only")
    elif net.task is not Task.CLASSIFICATION:
        raise ValueError(f"{kind.value} is defined for classification only")


def evaluate(
    net: Network,
    posterior: Posterior | None,
    dataset: Dataset,
    kind: MetricKind,
    mc_samples: int = 10,
    seed: int = 0,
    convention: Convention = Convention.PREDICTIVE,
) -> MetricReport:
    """Metric of the deterministic model (``posterior=None``) or of its Bayesianized form.

    In Bayesian mode NLL/ACC/ECE are computed on the predictive averaged over
    ``mc_samples`` weight draws; EmbeddingNorm and MSE average per-draw values.
    Draw ``s`` uses noise streams ``(seed, layer, s)``, so repeated calls with
    the same seed reuse the same base noise for any ``sigma_q``.
    """
    kind = MetricKind(kind)
    convention = Convention(convention)
    _check_compatible(net, dataset, kind)
    x = dataset.inputs

    if posterior is None:
        plans = [None]
        model = net
        samples = 0
    else:
        if mc_samples < 1:
            raise ValueError("mc_samples must be >= 1 in Bayesian mode")
        model = regroup(net, posterior)
        plans = [posterior.noise_plan(seed, s) for s in range(mc_samples)]
        samples = mc_samples

    if kind is MetricKind.EMBEDDING_NORM:
        vals = [pairwise_mean(np.linalg.norm(embed(model, x, p), axis=-1)) for p in plans]
        return MetricReport(kind, float(pairwise_mean(vals)), samples)

    outputs = np.stack([forward(model, x, p) for p in plans])
    if kind is MetricKind.MSE:
        vals = [pairwise_mean(np.sum((o - dataset.targets) ** 2, axis=-1)) for o in outputs]
        return MetricReport(kind, float(pairwise_mean(vals)), samples)

    labels = dataset.targets
    probs = softmax(outputs)
    if convention is Convention.EXPECTED_METRIC and len(plans) > 1:
        reps = [_classification_report(kind, p, labels, samples) for p in probs]
        return MetricReport(kind, float(pairwise_mean([r.value for r in reps])), samples)
    return _classification_report(kind, pairwise_mean(probs), labels, samples)

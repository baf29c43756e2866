"""Synthetic datasets, anchor sampling and pseudo-labels."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .netcore import Network, Task, forward

DEFAULT_ANCHOR_SIZE = 500


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # N x in_dim
    targets: np.ndarray | None  # N x out (regression) or N ints (classification)
    task: Task
    class_count: int = 0

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "task", Task(self.task))
        if self.targets is None:
            return
        if self.task is Task.CLASSIFICATION:
            y = np.asarray(self.targets, dtype=np.int64).reshape(-1)
            if y.size and (y.min() < 0 or y.max() >= self.class_count):
                raise ValueError("class index out of range")
        else:
            y = np.asarray(self.targets, dtype=np.float64)
            if y.ndim == 1:
                y = y[:, None]
        if len(y) != len(x):
            raise ValueError(f"{len(y)} targets for {len(x)} inputs")
        object.__setattr__(self, "targets", y)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def labeled(self) -> bool:
        return self.targets is not None

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        y = None if self.targets is None else self.targets[idx]
        return dataclasses.replace(self, inputs=self.inputs[idx], targets=y)

    def unlabeled(self) -> "Dataset":
        return dataclasses.replace(self, targets=None)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def toy_cubic(seed: int, size: int = 20, noise_std: float = 9.0, low: float = -4.0, high: float = 4.0) -> Dataset:
    """``x ~ U[-4, 4]``, ``y = x^3 + 9 eps`` with 20 points by default."""
    rng = _rng(seed)
    x = rng.uniform(low, high, size)
    y = x**3 + noise_std * rng.standard_normal(size)
    return Dataset(x[:, None], y[:, None], Task.REGRESSION)


def toy_blobs(class_count: int, per_class: int, separation: float, seed: int, dim: int = 2) -> Dataset:
    """Unit-variance Gaussian clusters; neighbouring centers sit ``separation`` apart on a circle."""
    if class_count < 2:
        raise ValueError("need at least two classes")
    rng = _rng(seed)
    centers = blob_centers(class_count, separation, dim)
    labels = np.repeat(np.arange(class_count), per_class)
    x = centers[labels] + rng.standard_normal((labels.size, dim))
    return Dataset(x, labels, Task.CLASSIFICATION, class_count)


def blob_centers(class_count: int, separation: float, dim: int = 2) -> np.ndarray:
    # chord between neighbouring centers on a circle of radius R is 2R sin(pi/K)
    angles = 2.0 * np.pi * np.arange(class_count) / class_count
    radius = separation / (2.0 * np.sin(np.pi / class_count))
    centers = np.zeros((class_count, dim))
    centers[:, 0] = radius * np.cos(angles)
    if dim > 1:
        centers[:, 1] = radius * np.sin(angles)
    return centers


def anchor_indices(n: int, size: int, seed: int) -> np.ndarray:
    if size > n:
        raise ValueError(f"anchor size {size} exceeds dataset size {n}")
    if size < 0:
        raise ValueError("anchor size must be non-negative")
    return _rng(seed).permutation(n)[:size]


def select_anchor(dataset: Dataset, size: int, seed: int) -> Dataset:
    """Uniform sample without replacement."""
    return dataset.subset(anchor_indices(len(dataset), size, seed))


def default_anchor_size(dataset: Dataset) -> int:
    return min(DEFAULT_ANCHOR_SIZE, len(dataset))


def argmax_lowest(z: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. the lowest class on ties
    return np.argmax(z, axis=-1)


def pseudo_label(net: Network, unlabeled: Dataset) -> Dataset:
    """Label with the deterministic model's argmax class."""
    if net.task is not Task.CLASSIFICATION or unlabeled.task is not Task.CLASSIFICATION:
        raise ValueError("pseudo-labels need a classification network and dataset")
    logits = forward(net, unlabeled.inputs)
    return Dataset(unlabeled.inputs, argmax_lowest(logits), Task.CLASSIFICATION, net.out_dim)

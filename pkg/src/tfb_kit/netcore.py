"""A tiny feed-forward network with frozen base weights and low-rank deltas.

Each layer computes ``act(h @ W.T + bias)`` with ``W = W0 + B @ A`` for
adapted layers. Only ``B``, ``A`` and biases are trainable. Everything is
batched over rows of the input.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .adapter import BayesianAdapter, LayerNoise, LoraAdapter, Posterior, PosteriorFamily, bayesianize


class LayerKind(str, Enum):
    ADAPTED = "dense_adapted"
    FIXED = "dense_fixed"


class Activation(str, Enum):
    IDENTITY = "identity"
    TANH = "tanh"
    RELU = "relu"


class Task(str, Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


class LossKind(str, Enum):
    MSE = "mse"
    SOFTMAX_CE = "softmax_ce"


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    in_dim: int
    out_dim: int
    rank: int = 0
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        object.__setattr__(self, "activation", Activation(self.activation))
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dims must be positive")
        if self.kind is LayerKind.ADAPTED and not 1 <= self.rank <= min(self.in_dim, self.out_dim):
            raise ValueError(f"rank {self.rank} must be in [1, {min(self.in_dim, self.out_dim)}]")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "rank": self.rank,
            "activation": self.activation.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LayerSpec":
        return cls(d["kind"], int(d["in_dim"]), int(d["out_dim"]), int(d.get("rank", 0)), d["activation"])


@dataclass
class Layer:
    spec: LayerSpec
    w0: np.ndarray  # out x in
    bias: np.ndarray  # out
    b: np.ndarray | None = None  # out x r
    a: np.ndarray | None = None  # r x in

    @property
    def adapted(self) -> bool:
        return self.spec.kind is LayerKind.ADAPTED

    def weight(self, noise: LayerNoise | None = None) -> np.ndarray:
        if not self.adapted:
            return self.w0
        a = self.a if noise is None or noise.lowrank is None else self.a + noise.lowrank
        w = self.w0 + self.b @ a
        if noise is not None and noise.full is not None:
            w = w + noise.full
        return w

    def lora(self) -> LoraAdapter:
        if not self.adapted:
            raise ValueError("layer is not adapted")
        return LoraAdapter(self.w0, self.b, self.a)


@dataclass
class Network:
    layers: list[Layer]
    task: Task = Task.REGRESSION

    def __post_init__(self):
        self.task = Task(self.task)
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.spec.out_dim != nxt.spec.in_dim:
                raise ValueError("adjacent layer dimensions do not chain")

    @property
    def in_dim(self) -> int:
        return self.layers[0].spec.in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].spec.out_dim

    @property
    def topology(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]

    def adapted_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.adapted]

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def trainable(self) -> dict[str, np.ndarray]:
        """Named views of trainable tensors (B, A, bias)."""
        params = {}
        for i, layer in enumerate(self.layers):
            if layer.adapted:
                params[f"{i}.b"] = layer.b
                params[f"{i}.a"] = layer.a
            params[f"{i}.bias"] = layer.bias
        return params


def init_network(topology: Sequence[LayerSpec], seed: int, task: Task = Task.REGRESSION) -> Network:
    """Seeded init: W0, bias, B ~ N(0, 1/in_dim); A = 0 so the adapted net starts at the base."""
    rng = np.random.Generator(np.random.PCG64(seed))
    layers = []
    for spec in topology:
        scale = 1.0 / np.sqrt(spec.in_dim)
        w0 = rng.standard_normal((spec.out_dim, spec.in_dim)) * scale
        bias = rng.standard_normal(spec.out_dim) * scale
        b = a = None
        if spec.kind is LayerKind.ADAPTED:
            b = rng.standard_normal((spec.out_dim, spec.rank)) * scale
            a = np.zeros((spec.rank, spec.in_dim))
        layers.append(Layer(spec, w0, bias, b, a))
    return Network(layers, task)


def mlp_topology(
    dims: Sequence[int], rank: int, activation: Activation = Activation.RELU, adapted: bool = True
) -> list[LayerSpec]:
    """Topology for an MLP through ``dims``; hidden layers use ``activation``, output is linear."""
    specs = []
    kind = LayerKind.ADAPTED if adapted else LayerKind.FIXED
    for k, (i, o) in enumerate(zip(dims, dims[1:])):
        act = Activation.IDENTITY if k == len(dims) - 2 else Activation(activation)
        specs.append(LayerSpec(kind, i, o, min(rank, i, o) if adapted else 0, act))
    return specs


def _activate(z: np.ndarray, act: Activation) -> np.ndarray:
    if act is Activation.TANH:
        return np.tanh(z)
    if act is Activation.RELU:
        return np.maximum(z, 0.0)
    return z


def _activate_grad(z: np.ndarray, out: np.ndarray, act: Activation) -> np.ndarray:
    if act is Activation.TANH:
        return 1.0 - out * out
    if act is Activation.RELU:
        return (z > 0).astype(np.float64)
    return np.ones_like(z)


def _as_batch(net: Network, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(f"input shape {x.shape} does not match network input dim {net.in_dim}")
    return x, single


def apply_layer(layer: Layer, h: np.ndarray, noise: LayerNoise | None = None) -> np.ndarray:
    return _activate(h @ layer.weight(noise).T + layer.bias, layer.spec.activation)


def forward(net: Network, x, noise_plan: Mapping[int, LayerNoise] | None = None, start: int = 0) -> np.ndarray:
    """Forward pass; returns outputs (regression) or logits (classification).

    ``x`` may be one vector or a batch of rows. ``start`` skips the first
    layers, treating ``x`` as the activation entering layer ``start``.
    """
    if start == 0:
        h, single = _as_batch(net, x)
    else:
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        single = np.ndim(x) == 1
    plan = noise_plan or {}
    for i in range(start, len(net.layers)):
        h = apply_layer(net.layers[i], h, plan.get(i))
    return h[0] if single else h


def forward_trace(net: Network, x, noise_plan: Mapping[int, LayerNoise] | None = None) -> list[np.ndarray]:
    """Activations at every layer boundary; element 0 is the input."""
    h, _ = _as_batch(net, x)
    plan = noise_plan or {}
    trace = [h]
    for i, layer in enumerate(net.layers):
        h = apply_layer(layer, h, plan.get(i))
        trace.append(h)
    return trace


def embed(net: Network, x, noise_plan: Mapping[int, LayerNoise] | None = None) -> np.ndarray:
    """Activation entering the final layer."""
    if len(net.layers) < 2:
        raise ValueError("embedding needs a network with at least two layers")
    h, single = _as_batch(net, x)
    plan = noise_plan or {}
    for i in range(len(net.layers) - 1):
        h = apply_layer(net.layers[i], h, plan.get(i))
    return h[0] if single else h


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


def loss_and_grads(
    net: Network,
    x,
    y,
    loss_kind: LossKind,
    l2_weight_decay: float = 0.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Full-batch loss and gradients for the trainable tensors.

    MSE is the mean over examples of the summed squared error; cross-entropy
    is the mean negative log-softmax of the target class. The penalty
    ``0.5 * wd * ||theta||^2`` covers B, A and biases only.
    """
    loss_kind = LossKind(loss_kind)
    x, _ = _as_batch(net, x)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    pre, post = [], [x]
    h = x
    for layer in net.layers:
        z = h @ layer.weight().T + layer.bias
        h = _activate(z, layer.spec.activation)
        pre.append(z)
        post.append(h)
    out = post[-1]

    if loss_kind is LossKind.MSE:
        target = np.asarray(y, dtype=np.float64).reshape(out.shape)
        resid = out - target
        with np.errstate(over="ignore", invalid="ignore"):
            loss = float(np.sum(resid * resid) / n)
        g = 2.0 * resid / n
    else:
        labels = np.asarray(y, dtype=np.int64).reshape(n)
        logp = log_softmax(out)
        loss = float(-np.mean(logp[np.arange(n), labels]))
        g = np.exp(logp)
        g[np.arange(n), labels] -= 1.0
        g /= n

    grads: dict[str, np.ndarray] = {}
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        g = g * _activate_grad(pre[i], post[i + 1], layer.spec.activation)
        grads[f"{i}.bias"] = g.sum(axis=0)
        if layer.adapted:
            dw = g.T @ post[i]
            grads[f"{i}.b"] = dw @ layer.a.T
            grads[f"{i}.a"] = layer.b.T @ dw
        if i > 0:
            g = g @ layer.weight()

    if l2_weight_decay:
        params = net.trainable()
        for name, p in params.items():
            loss += 0.5 * l2_weight_decay * float(np.sum(p * p))
            grads[name] = grads[name] + l2_weight_decay * p
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}")
    return loss, grads


class Adam:
    """Adam with bias correction; updates arrays in place."""

    def __init__(self, params: Mapping[str, np.ndarray], lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            g = grads[k]
            with np.errstate(over="ignore", invalid="ignore"):
                self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
                self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            if not (np.all(np.isfinite(self.m[k])) and np.all(np.isfinite(self.v[k]))):
                raise FloatingPointError(f"non-finite Adam moments for {k}")
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def train_adam(
    net: Network,
    x,
    y,
    steps: int,
    lr: float,
    seed: int = 0,
    weight_decay: float = 0.0,
    loss_kind: LossKind | None = None,
) -> tuple[Network, list[float]]:
    """Full-batch Adam on a copy of ``net``; returns the trained copy and per-step losses.

    ``seed`` is recorded for provenance only: full-batch training has no
    other source of randomness.
    """
    del seed
    if loss_kind is None:
        loss_kind = LossKind.MSE if net.task is Task.REGRESSION else LossKind.SOFTMAX_CE
    trained = net.copy()
    opt = Adam(trained.trainable(), lr)
    curve = []
    for step in range(steps):
        try:
            loss, grads = loss_and_grads(trained, x, y, loss_kind, weight_decay)
        except FloatingPointError:
            raise TrainingDiverged(step, float("nan")) from None
        curve.append(loss)
        try:
            opt.step(grads)
        except FloatingPointError:
            raise TrainingDiverged(step, loss) from None
    return trained, curve


def regroup(net: Network, posterior: Posterior) -> Network:
    """Copy of ``net`` whose adapted layers carry ``B'`` and ``M`` in place of ``B`` and ``A``."""
    out = net.copy()
    for i, ad in posterior.adapters.items():
        layer = out.layers[i]
        if not layer.adapted:
            raise ValueError(f"layer {i} is not adapted")
        layer.b = ad.b_prime.copy()
        layer.a = ad.m_mean.copy()
    return out


def bayesianize_network(
    net: Network,
    sigma_q: float,
    family: PosteriorFamily = PosteriorFamily.LOW_RANK_ISOTROPIC,
    layers: Sequence[int] | None = None,
) -> tuple[Network, Posterior]:
    """Bayesianize every adapted layer (or ``layers``) with one shared ``sigma_q``."""
    idx = net.adapted_indices() if layers is None else list(layers)
    if not idx:
        raise ValueError("network has no adapted layers")
    posterior = Posterior({i: bayesianize(net.layers[i].lora(), sigma_q) for i in idx}, PosteriorFamily(family))
    return regroup(net, posterior), posterior


@dataclass
class ModelCheckpoint:
    topology: list[LayerSpec]
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_network(cls, net: Network, meta: Mapping | None = None, posterior: Posterior | None = None):
        tensors = {}
        for i, layer in enumerate(net.layers):
            tensors[f"{i}.w0"] = layer.w0.copy()
            tensors[f"{i}.bias"] = layer.bias.copy()
            if layer.adapted:
                tensors[f"{i}.b"] = layer.b.copy()
                tensors[f"{i}.a"] = layer.a.copy()
        meta = dict(meta or {})
        meta["task"] = net.task.value
        if posterior is not None:
            for i, ad in posterior.adapters.items():
                tensors[f"{i}.b"] = ad.b_prime.copy()
                tensors[f"{i}.a"] = ad.m_mean.copy()
                tensors[f"{i}.d"] = ad.d.copy()
            meta["bayes"] = {
                "family": posterior.family.value,
                "sigma_q": posterior.sigma_q,
                "layers": sorted(posterior.adapters),
            }
        return cls(list(net.topology), tensors, meta)

    def network(self) -> Network:
        layers = []
        for i, spec in enumerate(self.topology):
            t = self.tensors
            layers.append(
                Layer(
                    spec,
                    t[f"{i}.w0"].copy(),
                    t[f"{i}.bias"].copy(),
                    t[f"{i}.b"].copy() if spec.kind is LayerKind.ADAPTED else None,
                    t[f"{i}.a"].copy() if spec.kind is LayerKind.ADAPTED else None,
                )
            )
        return Network(layers, Task(self.meta.get("task", Task.REGRESSION.value)))

    def posterior(self) -> Posterior | None:
        info = self.meta.get("bayes")
        if info is None:
            return None
        adapters = {
            int(i): BayesianAdapter(self.tensors[f"{i}.b"], self.tensors[f"{i}.a"], self.tensors[f"{i}.d"], info["sigma_q"])
            for i in info["layers"]
        }
        return Posterior(adapters, PosteriorFamily(info["family"]))

    def equals(self, other: "ModelCheckpoint") -> bool:
        if self.topology != other.topology or self.meta != other.meta:
            return False
        if self.tensors.keys() != other.tensors.keys():
            return False
        return all(
            self.tensors[k].shape == other.tensors[k].shape
            and self.tensors[k].tobytes() == other.tensors[k].tobytes()
            for k in self.tensors
        )

    def with_meta(self, **kw) -> "ModelCheckpoint":
        return dataclasses.replace(self, meta={**self.meta, **kw})

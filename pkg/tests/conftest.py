import numpy as np
import pytest

from tfb_kit.data import toy_blobs, toy_cubic
from tfb_kit.netcore import (
    Activation,
    LayerKind,
    LayerSpec,
    LossKind,
    Task,
    init_network,
    loss_and_grads,
    mlp_topology,
    train_adam,
)


def random_network(rng: np.random.Generator, task=Task.REGRESSION, final_adapted=True, min_layers=1):
    """Random small network with non-zero A so every gradient path is live."""
    depth = int(rng.integers(min_layers, 4))
    dims = [int(rng.integers(1, 6)) for _ in range(depth + 1)]
    if task is Task.CLASSIFICATION:
        dims[-1] = max(dims[-1], 2)
    specs = []
    for k in range(depth):
        i, o = dims[k], dims[k + 1]
        adapted = bool(rng.integers(0, 2)) or (final_adapted and k == depth - 1)
        act = Activation.IDENTITY if k == depth - 1 else Activation(rng.choice(["tanh", "relu", "identity"]))
        if adapted:
            specs.append(LayerSpec(LayerKind.ADAPTED, i, o, int(rng.integers(1, min(i, o) + 1)), act))
        else:
            specs.append(LayerSpec(LayerKind.FIXED, i, o, 0, act))
    net = init_network(specs, int(rng.integers(0, 2**31)), task)
    for layer in net.layers:
        if layer.adapted:
            layer.a[...] = rng.standard_normal(layer.a.shape)
    return net


def finite_difference(net, x, y, kind, wd, name, h=1e-5):
    param = net.trainable()[name]
    grad = np.zeros_like(param)
    for idx in np.ndindex(param.shape):
        old = param[idx]
        param[idx] = old + h
        up, _ = loss_and_grads(net, x, y, kind, wd)
        param[idx] = old - h
        down, _ = loss_and_grads(net, x, y, kind, wd)
        param[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)


def random_batch(rng, net):
    x = rng.standard_normal((int(rng.integers(1, 6)), net.in_dim))
    if net.task is Task.REGRESSION:
        return x, rng.standard_normal((x.shape[0], net.out_dim)), LossKind.MSE
    return x, rng.integers(0, net.out_dim, x.shape[0]), LossKind.SOFTMAX_CE


def gradient_check_worst(count=200, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(count):
        task = Task.REGRESSION if k % 2 == 0 else Task.CLASSIFICATION
        net = random_network(rng, task)
        x, y, kind = random_batch(rng, net)
        wd = float(rng.choice([0.0, 1e-5, 0.1]))
        _, grads = loss_and_grads(net, x, y, kind, wd)
        for name in net.trainable():
            worst = max(worst, rel_err(grads[name], finite_difference(net, x, y, kind, wd, name)))
    return worst



@pytest.fixture(scope="session")
def toy_cubic_model():
    ds = toy_cubic(0)
    net = init_network(mlp_topology([1, 16, 1], 1, Activation.RELU), 0)
    trained, curve = train_adam(net, ds.inputs, ds.targets, 1000, 0.1)
    return trained, ds, curve


@pytest.fixture(scope="session")
def blobs_model():
    ds = toy_blobs(3, 100, 2.5, seed=11)
    net = init_network(mlp_topology([2, 16, 3], 2, Activation.TANH), 5, Task.CLASSIFICATION)
    trained, curve = train_adam(net, ds.inputs, ds.targets, 300, 0.05)
    return trained, ds, curve


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

"""Central finite-difference checks for every differentiable layer type.

Each check builds a small layer stack in float64, computes analytic
gradients for every parameter and the input, then compares against central
differences. Inputs near non-differentiable points (relu kinks, pooling
ties) are nudged away first so the finite differences are valid.

The relative-error gate is 1e-4 over at least 20 seeds per layer type.
"""

import numpy as np
import pytest

import quicknet.layers as L
from quicknet import tensor as T
from quicknet.model import commitment_specs
from quicknet.rng import RandomStream

SEEDS = range(20)
H = 1e-5
REL_TOL = 1e-4


def numeric_grad(f, arr, h=H):
    grad = np.zeros_like(arr)
    flat, gflat = arr.ravel(), grad.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = f()
        flat[i] = keep - h
        fm = f()
        flat[i] = keep
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(analytic, numeric):
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return np.linalg.norm(analytic - numeric) / scale


def check_gradients(loss_fn, tensors):
    """Assert analytic == numeric for every (name, tensor) pair."""
    loss = loss_fn()
    T.backward(loss)
    grads = {name: t.grad.copy() for name, t in tensors}
    for name, t in tensors:
        t.grad = None
    for name, t in tensors:
        numeric = numeric_grad(lambda: float(loss_fn().data), t.data)
        err = rel_error(grads[name], numeric)
        assert err < REL_TOL, f"{name}: relative error {err:.3e}"


def distinct_image(rng, shape, spread=1.0):
    """Random array with all elements pairwise distinct (no pooling ties)."""
    x = rng.uniform(-spread, spread, shape)
    return x + np.arange(x.size).reshape(shape) * 1e-3


def weighted_sum(out, rng):
    """Scalar readout with a random weighting, so gradients are not constant."""
    return T.tensor_sum(T.mul(out, T.Tensor(rng.uniform(0.5, 1.5, out.shape))))


def nudge_dense_relu_margin(layers, x, margin=0.02, bumps=12):
    """Shift dense biases until no pre-relu value sits within `margin` of zero."""
    for _ in range(bumps):
        moved = False
        h = T.Tensor(x)
        for layer, nxt in zip(layers, layers[1:] + [None]):
            h = layer.forward(h)
            if isinstance(layer, L.Dense) and isinstance(nxt, L.ReLU):
                close = np.abs(h.data) < margin
                if close.any():
                    cols = np.where(close.any(axis=0))[0]
                    layer.bias.data[cols] += 3.5 * margin
                    moved = True
                    break
        if not moved:
            return
    raise AssertionError("could not establish a relu margin for finite differences")


@pytest.mark.parametrize("seed", SEEDS)
def test_dense(seed):
    rng = np.random.default_rng(seed)
    layer = L.Dense(6, 5, RandomStream(seed))
    x = T.Tensor(rng.standard_normal((4, 6)))
    loss = lambda: weighted_sum(layer.forward(x), np.random.default_rng(seed + 1))
    check_gradients(loss, [("x", x), ("w", layer.weights), ("b", layer.bias)])


@pytest.mark.parametrize("seed", SEEDS)
def test_conv(seed):
    rng = np.random.default_rng(seed)
    layer = L.Conv2d(2, 3, (3, 3), 1, 1, RandomStream(seed))
    x = T.Tensor(rng.standard_normal((2, 2, 5, 5)))
    loss = lambda: weighted_sum(layer.forward(x), np.random.default_rng(seed + 1))
    check_gradients(loss, [("x", x), ("w", layer.weights), ("b", layer.bias)])


@pytest.mark.parametrize("seed", SEEDS)
def test_conv_strided_unpadded(seed):
    rng = np.random.default_rng(seed)
    layer = L.Conv2d(1, 2, (3, 3), 2, 0, RandomStream(seed))
    x = T.Tensor(rng.standard_normal((2, 1, 7, 7)))
    loss = lambda: weighted_sum(layer.forward(x), np.random.default_rng(seed + 1))
    check_gradients(loss, [("x", x), ("w", layer.weights), ("b", layer.bias)])


@pytest.mark.parametrize("seed", SEEDS)
def test_maxpool(seed):
    rng = np.random.default_rng(seed)
    layer = L.MaxPool((2, 2))
    x = T.Tensor(distinct_image(rng, (2, 2, 4, 4)))
    loss = lambda: weighted_sum(layer.forward(x), np.random.default_rng(seed + 1))
    check_gradients(loss, [("x", x)])


@pytest.mark.parametrize("seed", SEEDS)
def test_avgpool(seed):
    rng = np.random.default_rng(seed)
    layer = L.AvgPool((2, 2))
    x = T.Tensor(rng.standard_normal((2, 2, 4, 4)))
    loss = lambda: weighted_sum(layer.forward(x), np.random.default_rng(seed + 1))
    check_gradients(loss, [("x", x)])


@pytest.mark.parametrize("seed", SEEDS)
def test_mixedpool(seed):
    rng = np.random.default_rng(seed)
    layer = L.MixedPool((2, 2))
    layer.mix.data += rng.uniform(-1.0, 1.0)
    x = T.Tensor(distinct_image(rng, (2, 2, 4, 4)))
    loss = lambda: weighted_sum(layer.forward(x), np.random.default_rng(seed + 1))
    check_gradients(loss, [("x", x), ("mix", layer.mix)])


@pytest.mark.parametrize("seed", SEEDS)
def test_relu(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 7))
    x = T.Tensor(np.where(np.abs(x) < 0.05, x + 0.1 * np.sign(x) + 0.01, x))
    loss = lambda: weighted_sum(T.relu(x), np.random.default_rng(seed + 1))
    check_gradients(loss, [("x", x)])


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    logits = T.Tensor(rng.standard_normal((6, 4)))
    labels = rng.integers(0, 4, 6)
    loss = lambda: L.softmax_cross_entropy(logits, labels)[0]
    check_gradients(loss, [("logits", logits)])


@pytest.mark.parametrize("seed", SEEDS)
def test_binary_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    scores = T.Tensor(rng.standard_normal((8, 1)))
    targets = rng.integers(0, 2, 8).astype(np.float64)
    loss = lambda: L.binary_cross_entropy(scores, targets)
    check_gradients(loss, [("scores", scores)])


@pytest.mark.parametrize("seed", SEEDS)
def test_commitment_head(seed):
    # the whole head (flatten -> dense -> relu -> dense) under its BCE loss
    rng = np.random.default_rng(seed)
    act_shape, classes = (2, 3, 3), 4
    stream = RandomStream(seed)
    layers, shape = [], act_shape
    for i, spec in enumerate(commitment_specs(classes)):
        layers.append(L.build_layer(spec, shape, stream.child(f"c{i}"), name=f"c{i}"))
        shape = L.out_shape(spec, shape)
    x = rng.standard_normal((5,) + act_shape)
    nudge_dense_relu_margin(layers, x)
    targets = rng.integers(0, 2, 5).astype(np.float64)
    xt = T.Tensor(x)
    loss = lambda: L.binary_cross_entropy(L.run_layers(layers, xt), targets)
    tensors = [("x", xt)] + [
        (p.name, p) for layer in layers for p in layer.params()
    ]
    check_gradients(loss, tensors)


@pytest.mark.parametrize("seed", SEEDS)
def test_dense_relu_classifier_stack(seed):
    # an exit path in miniature: subnet dense+relu, classifier dense, CE loss
    rng = np.random.default_rng(seed)
    stream = RandomStream(seed)
    layers = [
        L.Dense(6, 8, stream.child("s"), name="s"),
        L.ReLU(),
        L.Dense(8, 3, stream.child("h"), name="h"),
    ]
    x = rng.standard_normal((5, 6))
    nudge_dense_relu_margin(layers, x)
    labels = rng.integers(0, 3, 5)
    xt = T.Tensor(x)
    loss = lambda: L.softmax_cross_entropy(L.run_layers(layers, xt), labels)[0]
    tensors = [("x", xt)] + [(p.name, p) for layer in layers for p in layer.params()]
    check_gradients(loss, tensors)

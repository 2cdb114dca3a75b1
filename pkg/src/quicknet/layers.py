"""Layer zoo: dense, 2-D convolution, activations, pooling, losses.

Layers are built from spec dicts (the same schema the architecture JSON
uses), draw their weights from a RandomStream, and expose forward() over
graph tensors. Shape checking happens at construction via out_shape, so a
bad architecture fails before any training starts.
"""

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, ShapeError


def _fan_in_uniform(stream, shape, fan_in, dtype):
    bound = float(np.sqrt(1.0 / fan_in))
    return stream.uniform(-bound, bound, shape).astype(dtype)


class Dense:
    def __init__(self, in_dim, units, stream, dtype=np.float64, name="dense"):
        self.in_dim = int(in_dim)
        self.units = int(units)
        self.weights = T.Parameter(_fan_in_uniform(stream, (in_dim, units), in_dim, dtype), name=f"{name}/w")
        self.bias = T.Parameter(np.zeros(units, dtype=dtype), name=f"{name}/b")

    def forward(self, x):
        if x.data.ndim != 2 or x.data.shape[1] != self.in_dim:
            raise ShapeError(f"dense expects (batch, {self.in_dim}), got {x.data.shape}")
        return T.add(T.matmul(x, self.weights), self.bias)

    def params(self):
        return [self.weights, self.bias]


class Conv2d:
    def __init__(self, in_channels, out_channels, kernel, stride, padding, stream,
                 dtype=np.float64, name="conv"):
        kh, kw = kernel
        fan_in = in_channels * kh * kw
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = (kh, kw)
        self.stride = int(stride)
        self.padding = int(padding)
        self.weights = T.Parameter(
            _fan_in_uniform(stream, (out_channels, in_channels, kh, kw), fan_in, dtype),
            name=f"{name}/w",
        )
        self.bias = T.Parameter(np.zeros(out_channels, dtype=dtype), name=f"{name}/b")

    def forward(self, x):
        if x.data.ndim != 4 or x.data.shape[1] != self.in_channels:
            raise ShapeError(
                f"conv expects (batch, {self.in_channels}, H, W), got {x.data.shape}"
            )
        return T.conv2d(x, self.weights, self.bias, self.stride, self.padding)

    def params(self):
        return [self.weights, self.bias]


class ReLU:
    def forward(self, x):
        return T.relu(x)

    def params(self):
        return []


class MaxPool:
    def __init__(self, window):
        self.window = tuple(window)

    def forward(self, x):
        return T.maxpool2d(x, *self.window)

    def params(self):
        return []


class AvgPool:
    def __init__(self, window):
        self.window = tuple(window)

    def forward(self, x):
        return T.avgpool2d(x, *self.window)

    def params(self):
        return []


class MixedPool:
    """Learnable blend a*max + (1-a)*avg with a = logistic(mix), one scalar per layer."""

    def __init__(self, window, dtype=np.float64, name="mixedpool"):
        self.window = tuple(window)
        self.mix = T.Parameter(np.zeros((), dtype=dtype), name=f"{name}/mix")

    def forward(self, x):
        a = T.sigmoid(self.mix)
        mx = T.maxpool2d(x, *self.window)
        av = T.avgpool2d(x, *self.window)
        return T.add(T.mul(a, mx), T.mul(T.add_const(T.neg(a), 1.0), av))

    def mix_coefficient(self):
        return float(T.sigmoid_values(self.mix.data.reshape(1))[0])

    def params(self):
        return [self.mix]


class Flatten:
    def forward(self, x):
        return T.flatten_rows(x)

    def params(self):
        return []


# ---------------------------------------------------------------------------
# spec-dict construction and shape inference
# ---------------------------------------------------------------------------

def out_shape(spec, in_shape):
    """Output shape of a layer spec for a per-sample input shape (no batch axis)."""
    kind = spec["type"]
    if kind == "dense":
        if len(in_shape) != 1:
            raise ConfigError(f"dense needs a flat input, got {in_shape}")
        return (int(spec["units"]),)
    if kind == "relu":
        return tuple(in_shape)
    if kind == "flatten":
        return (int(np.prod(in_shape)),)
    if kind == "conv":
        if len(in_shape) != 3:
            raise ConfigError(f"conv needs (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        kh, kw = _kernel_pair(spec["kernel"])
        stride = int(spec.get("stride", 1))
        pad = int(spec.get("padding", 0))
        ho = (h + 2 * pad - kh) // stride + 1
        wo = (w + 2 * pad - kw) // stride + 1
        if ho <= 0 or wo <= 0:
            raise ConfigError(
                f"conv output extent not positive: input {in_shape}, kernel {(kh, kw)}, "
                f"stride {stride}, padding {pad}"
            )
        return (int(spec["channels"]), ho, wo)
    if kind in ("maxpool", "avgpool", "mixedpool"):
        if len(in_shape) != 3:
            raise ConfigError(f"{kind} needs (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        kh, kw = _kernel_pair(spec["window"])
        if h % kh or w % kw:
            raise ConfigError(
                f"{kind} window {(kh, kw)} does not divide spatial extents {(h, w)}"
            )
        return (c, h // kh, w // kw)
    raise ConfigError(f"unknown layer type {kind!r}")


def _kernel_pair(value):
    if isinstance(value, int):
        return (value, value)
    kh, kw = value
    return (int(kh), int(kw))


def build_layer(spec, in_shape, stream, dtype=np.float64, name=""):
    kind = spec["type"]
    if kind == "dense":
        return Dense(in_shape[0], spec["units"], stream, dtype=dtype, name=name)
    if kind == "relu":
        return ReLU()
    if kind == "flatten":
        return Flatten()
    if kind == "conv":
        kh, kw = _kernel_pair(spec["kernel"])
        return Conv2d(in_shape[0], spec["channels"], (kh, kw), spec.get("stride", 1),
                      spec.get("padding", 0), stream, dtype=dtype, name=name)
    if kind == "maxpool":
        return MaxPool(_kernel_pair(spec["window"]))
    if kind == "avgpool":
        return AvgPool(_kernel_pair(spec["window"]))
    if kind == "mixedpool":
        return MixedPool(_kernel_pair(spec["window"]), dtype=dtype, name=name)
    raise ConfigError(f"unknown layer type {kind!r}")


def run_layers(layers, x):
    for layer in layers:
        x = layer.forward(x)
    return x


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of logits[batch, C] against integer labels.

    Fused with the softmax through log-sum-exp for stability. Returns the
    scalar loss node and the class probabilities as a plain array.
    """
    z = logits.data
    labels = np.asarray(labels)
    n, c = z.shape
    bad = (labels < 0) | (labels >= c)
    if bad.any():
        idx = int(np.argmax(bad))
        raise DataError(f"label {labels[idx]} at index {idx} outside [0, {c})")

    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    logp = z - lse
    probs = np.exp(logp)
    loss_value = -logp[np.arange(n), labels].mean()
    out = T.Tensor(np.asarray(loss_value), parents=(logits,))

    def back(g):
        grad = probs.copy()
        grad[np.arange(n), labels] -= 1.0
        T._accumulate(logits, grad * (float(g) / n))

    out._backward = back
    return out, probs


def binary_cross_entropy(scores, targets):
    """Mean BCE of pre-squash scores[batch] (or [batch, 1]) against {0,1} targets."""
    z = scores.data.reshape(-1)
    t = np.asarray(targets, dtype=z.dtype).reshape(-1)
    if z.shape != t.shape:
        raise ShapeError(f"score/target counts differ: {z.shape} vs {t.shape}")
    if not np.isin(t, (0.0, 1.0)).all():
        raise DataError("binary targets must be 0 or 1")

    # max(z,0) - z*t + log(1 + exp(-|z|)) is the overflow-safe fused form
    loss_value = (np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))).mean()
    out = T.Tensor(np.asarray(loss_value), parents=(scores,))

    def back(g):
        grad = (T.sigmoid_values(z) - t) * (float(g) / z.size)
        T._accumulate(scores, grad.reshape(scores.data.shape))

    out._backward = back
    return out

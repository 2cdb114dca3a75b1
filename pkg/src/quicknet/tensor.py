"""Dense tensors with reverse-mode gradient propagation.

A Tensor wraps a numpy array and remembers how it was produced; calling
backward() on a scalar result walks the graph in reverse topological order
and accumulates gradients into every reachable node. Parameters are leaf
tensors carrying optimizer state and a freeze flag.

All operations are pure: they allocate new output arrays and never mutate
their inputs. The only in-place mutation in the package is the optimizer
update (see optim.py), which requires exclusive access to its parameters.
"""

import numpy as np

from . import kernels
from .errors import ContractError, ShapeError


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """A trainable leaf: value, gradient slot, freeze flag, Adam moments."""

    __slots__ = ("name", "frozen", "moment1", "moment2", "step")

    def __init__(self, value, name="", frozen=False):
        super().__init__(np.ascontiguousarray(value))
        self.name = name
        self.frozen = frozen
        self.moment1 = np.zeros_like(self.data)
        self.moment2 = np.zeros_like(self.data)
        self.step = 0


def _accumulate(node, grad):
    if node.grad is None:
        node.grad = grad.copy()
    else:
        node.grad = node.grad + grad


def backward(loss):
    """Populate gradients of every node reachable from the scalar `loss`."""
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")

    order = []
    seen = set()
    stack = [(loss, iter(loss._parents))]
    seen.add(id(loss))
    while stack:
        node, parents = stack[-1]
        advanced = False
        for parent in parents:
            if id(parent) not in seen:
                seen.add(id(parent))
                stack.append((parent, iter(parent._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def matmul(a, b):
    """2-D matrix product a[m,k] @ b[k,n]."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul extents do not match: {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data, parents=(a, b))

    def back(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    out._backward = back
    return out


def add(a, b):
    """Elementwise sum; also accepts a trailing-axis bias vector for b."""
    bias_style = (
        b.data.ndim == 1
        and a.data.ndim >= 2
        and a.data.shape[-1] == b.data.shape[0]
        and a.data.shape != b.data.shape
    )
    if not bias_style and a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data, parents=(a, b))

    def back(g):
        _accumulate(a, g)
        if bias_style:
            _accumulate(b, g.reshape(-1, b.data.shape[0]).sum(axis=0))
        else:
            _accumulate(b, g)

    out._backward = back
    return out


def add_const(a, k):
    out = Tensor(a.data + k, parents=(a,))
    out._backward = lambda g: _accumulate(a, g)
    return out


def neg(a):
    out = Tensor(-a.data, parents=(a,))
    out._backward = lambda g: _accumulate(a, -g)
    return out


def mul(a, b):
    """Elementwise product; one operand may be a single-element tensor."""
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(f"mul shapes differ: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data, parents=(a, b))

    def back(g):
        ga = g * b.data
        gb = g * a.data
        if a.data.size == 1 and g.size != 1:
            ga = ga.sum().reshape(a.data.shape)
        if b.data.size == 1 and g.size != 1:
            gb = gb.sum().reshape(b.data.shape)
        _accumulate(a, ga)
        _accumulate(b, gb)

    out._backward = back
    return out


def mul_const(a, k):
    out = Tensor(a.data * k, parents=(a,))
    out._backward = lambda g: _accumulate(a, g * k)
    return out


def relu(a):
    out = Tensor(np.maximum(a.data, 0), parents=(a,))
    out._backward = lambda g: _accumulate(a, g * (a.data > 0))
    return out


def sigmoid_values(z):
    """Numerically stable logistic function on a plain array."""
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(a):
    y = sigmoid_values(a.data)
    out = Tensor(y, parents=(a,))
    out._backward = lambda g: _accumulate(a, g * y * (1.0 - y))
    return out


def tensor_sum(a):
    """Sum of all elements, as a scalar node."""
    out = Tensor(a.data.sum(), parents=(a,))
    out._backward = lambda g: _accumulate(a, np.full_like(a.data, float(g)))
    return out


def flatten_rows(a):
    """(N, ...) -> (N, prod(...)) keeping the leading axis."""
    n = a.data.shape[0]
    out = Tensor(a.data.reshape(n, -1), parents=(a,))
    out._backward = lambda g: _accumulate(a, g.reshape(a.data.shape))
    return out


def conv2d(x, w, b, stride, pad):
    """Cross-correlation of x[N,Cin,H,W] with w[Cout,Cin,kh,kw] plus bias."""
    xd = np.ascontiguousarray(x.data)
    y = kernels.conv2d_forward(xd, w.data, b.data, stride, pad)
    out = Tensor(y, parents=(x, w, b))

    def back(g):
        dx, dw, db = kernels.conv2d_backward(xd, w.data, np.ascontiguousarray(g), stride, pad)
        _accumulate(x, np.asarray(dx))
        _accumulate(w, np.asarray(dw))
        _accumulate(b, np.asarray(db))

    out._backward = back
    return out


def maxpool2d(x, kh, kw):
    xd = np.ascontiguousarray(x.data)
    y, arg = kernels.maxpool_forward(xd, kh, kw)
    out = Tensor(y, parents=(x,))

    def back(g):
        _accumulate(x, np.asarray(kernels.maxpool_backward(np.ascontiguousarray(g), arg, kh, kw)))

    out._backward = back
    return out


def avgpool2d(x, kh, kw):
    xd = np.ascontiguousarray(x.data)
    y = kernels.avgpool_forward(xd, kh, kw)
    out = Tensor(y, parents=(x,))

    def back(g):
        _accumulate(x, np.asarray(kernels.avgpool_backward(np.ascontiguousarray(g), kh, kw)))

    out._backward = back
    return out

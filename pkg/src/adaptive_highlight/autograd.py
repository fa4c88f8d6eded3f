"""Minimal dense-tensor engine with reverse-mode autodiff.

Every op takes :class:`Value` nodes, computes its result eagerly with numpy and
records a closure that pushes the upstream gradient back into its parents.
Temporal tensors follow the ``(1, channels, time)`` layout.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with an op."""


class Value:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = np.zeros_like(arr)
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Value(shape={self.shape}, dtype={self.dtype}{label})"

    def backward(self):
        """Accumulate d(self)/d(node) into ``grad`` of every requires-grad ancestor."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    __add__ = lambda self, other: add(self, other)
    __mul__ = lambda self, other: mul(self, other)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def make_node(data, parents, backward):
    """Wrap ``data`` as the output of an op over ``parents``.

    ``backward(g)`` receives the upstream gradient and must return one gradient
    (or None) per parent. Untracked parents are skipped.
    """
    tracked = any(p.requires_grad for p in parents)
    if not tracked:
        return Value(data)

    def _push(g):
        grads = backward(g)
        for p, pg in zip(parents, grads):
            if pg is not None and p.requires_grad:
                p.grad += pg

    return Value(data, requires_grad=True, _parents=tuple(parents), _backward=_push)


def as_value(x):
    return x if isinstance(x, Value) else Value(x)


def _check_temporal(x, what="x"):
    if x.data.ndim != 3 or x.shape[0] != 1:
        raise ShapeError(f"{what} must have shape (1, C, T), got {x.shape}")


# ---------------------------------------------------------------------------
# temporal operators


def temporal_conv(x, weight, bias=None, stride=1, padding=0):
    """1-D cross-correlation over time. ``weight`` is ``(Cout, Cin, K)``."""
    _check_temporal(x)
    cout, cin, k = weight.shape
    if x.shape[1] != cin:
        raise ShapeError(f"input has {x.shape[1]} channels, weight expects {cin}")
    if k < 1 or stride < 1 or padding < 0:
        raise ValueError("kernel and stride must be >= 1, padding >= 0")
    t_in = x.shape[2]
    t_out = (t_in + 2 * padding - k) // stride + 1
    if t_in + 2 * padding < k or t_out < 1:
        raise ShapeError(f"empty conv output for T={t_in}, K={k}, padding={padding}")

    xp = np.pad(x.data[0], ((0, 0), (padding, padding))) if padding else x.data[0]
    w = weight.data
    span = stride * (t_out - 1) + 1
    out = np.zeros((cout, t_out), dtype=x.dtype)
    for j in range(k):
        out += w[:, :, j] @ xp[:, j:j + span:stride]
    if bias is not None:
        out += bias.data[:, None]

    def backward(g):
        g = g[0]
        dxp = np.zeros_like(xp)
        dw = np.empty_like(w)
        for j in range(k):
            window = xp[:, j:j + span:stride]
            dw[:, :, j] = g @ window.T
            dxp[:, j:j + span:stride] += w[:, :, j].T @ g
        dx = dxp[:, padding:padding + t_in] if padding else dxp
        grads = [dx[None], dw]
        if bias is not None:
            grads.append(g.sum(axis=1))
        return grads

    parents = [x, weight] + ([bias] if bias is not None else [])
    return make_node(out[None], parents, backward)


def deconv_offset(kernel, stride):
    """Left crop applied to the full transposed-conv output (``(K - s) // 2``)."""
    return max(0, (kernel - stride) // 2)


def temporal_deconv(x, weight, stride, crop_to, bias=None):
    """Transposed (fractionally-strided) 1-D convolution.

    ``weight`` is ``(Cin, Cout, K)``. The full output of length
    ``max((T-1)*stride + K, T*stride)`` is cropped by ``(K - stride) // 2`` on the
    left and then truncated to ``crop_to`` frames, so ``crop_to == T*stride``
    reproduces the usual "upsample by stride" geometry.
    """
    _check_temporal(x)
    cin, cout, k = weight.shape
    if x.shape[1] != cin:
        raise ShapeError(f"input has {x.shape[1]} channels, weight expects {cin}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    t_in = x.shape[2]
    full = max((t_in - 1) * stride + k, t_in * stride)
    offset = deconv_offset(k, stride)
    if crop_to < 1 or offset + crop_to > full:
        raise ShapeError(
            f"crop_to={crop_to} exceeds producible length {full - offset} "
            f"(T={t_in}, K={k}, stride={stride})"
        )

    xd = x.data[0]
    w = weight.data
    span = stride * (t_in - 1) + 1
    out_full = np.zeros((cout, full), dtype=x.dtype)
    for j in range(k):
        out_full[:, j:j + span:stride] += w[:, :, j].T @ xd
    out = out_full[:, offset:offset + crop_to]
    if bias is not None:
        out = out + bias.data[:, None]

    def backward(g):
        g_full = np.zeros_like(out_full)
        g_full[:, offset:offset + crop_to] = g[0]
        dx = np.zeros_like(xd)
        dw = np.empty_like(w)
        for j in range(k):
            gj = g_full[:, j:j + span:stride]
            dx += w[:, :, j] @ gj
            dw[:, :, j] = xd @ gj.T
        grads = [dx[None], dw]
        if bias is not None:
            grads.append(g[0].sum(axis=1))
        return grads

    parents = [x, weight] + ([bias] if bias is not None else [])
    return make_node(np.ascontiguousarray(out)[None], parents, backward)


def temporal_max_pool(x, window=2, stride=2):
    """Max over sliding time windows; ties route gradient to the first index."""
    _check_temporal(x)
    c, t_in = x.shape[1], x.shape[2]
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    if t_in < window:
        raise ShapeError(f"T={t_in} is shorter than pool window {window}")
    t_out = (t_in - window) // stride + 1
    idx = np.arange(t_out)[:, None] * stride + np.arange(window)
    windows = x.data[0][:, idx]
    arg = windows.argmax(axis=2)
    out = np.take_along_axis(windows, arg[:, :, None], axis=2)[:, :, 0]
    src = idx[np.arange(t_out), arg] + np.arange(c)[:, None] * t_in

    def backward(g):
        dx = np.bincount(src.ravel(), weights=g[0].ravel(), minlength=c * t_in)
        return [dx.astype(x.dtype).reshape(1, c, t_in)]

    return make_node(out[None], [x], backward)


def temporal_avg_pool_global(x):
    _check_temporal(x)
    t_in = x.shape[2]
    out = x.data.mean(axis=2, keepdims=True)

    def backward(g):
        return [np.broadcast_to(g / t_in, x.shape).astype(x.dtype)]

    return make_node(out, [x], backward)


# ---------------------------------------------------------------------------
# dense and elementwise


def linear(x, weight, bias=None):
    """``x @ weight + bias`` for ``x`` of shape ``(N, F)`` and weight ``(F, G)``."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear: cannot multiply {x.shape} by {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[1]},)")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def backward(g):
        grads = [g @ weight.data.T, x.data.T @ g]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    parents = [x, weight] + ([bias] if bias is not None else [])
    return make_node(out, parents, backward)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        return [g @ b.data.T, a.data.T @ g]

    return make_node(a.data @ b.data, [a, b], backward)


def relu(x):
    mask = x.data > 0

    def backward(g):
        return [g * mask]

    return make_node(x.data * mask, [x], backward)


def dropout(x, rate, training, rng=None):
    """Inverted dropout. Identity (the same node) in eval mode or at rate 0."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)

    def backward(g):
        return [g * keep]

    return make_node(x.data * keep, [x], backward)


def add(x, y):
    x, y = as_value(x), as_value(y)
    if x.shape != y.shape:
        raise ShapeError(f"add: shape mismatch {x.shape} vs {y.shape}")

    def backward(g):
        return [g, g]

    return make_node(x.data + y.data, [x, y], backward)


def mul(x, y):
    x, y = as_value(x), as_value(y)
    if x.shape != y.shape:
        raise ShapeError(f"mul: shape mismatch {x.shape} vs {y.shape}")

    def backward(g):
        return [g * y.data, g * x.data]

    return make_node(x.data * y.data, [x, y], backward)


def scale(x, factor):
    factor = x.dtype.type(factor)

    def backward(g):
        return [g * factor]

    return make_node(x.data * factor, [x], backward)


def square(x):
    def backward(g):
        return [2 * g * x.data]

    return make_node(x.data * x.data, [x], backward)


def total(x):
    """Sum of all entries as a ``(1,)`` scalar."""

    def backward(g):
        return [np.broadcast_to(g, x.shape).astype(x.dtype)]

    return make_node(x.data.sum().reshape(1), [x], backward)


def mean(x, axis):
    n = x.shape[axis]

    def backward(g):
        return [np.broadcast_to(np.expand_dims(g, axis) / n, x.shape).astype(x.dtype)]

    return make_node(x.data.mean(axis=axis), [x], backward)


def reshape(x, shape):
    def backward(g):
        return [g.reshape(x.shape)]

    return make_node(x.data.reshape(shape), [x], backward)


def transpose(x, axes=None):
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.data.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return [np.transpose(g, inverse)]

    return make_node(np.ascontiguousarray(np.transpose(x.data, axes)), [x], backward)


def take(x, start, stop, axis=-1):
    """Contiguous slice ``[start:stop]`` along ``axis``."""
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[index] = g
        return [dx]

    return make_node(x.data[index].copy(), [x], backward)


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return [p * (g - (g * p).sum(axis=axis, keepdims=True))]

    return make_node(p, [x], backward)

"""Dense NCHW tensors with reverse-mode differentiation.

Every operation below records a :class:`Node` on its output when at least
one input requires a gradient. :meth:`Tensor.backward` walks the recorded
DAG once in reverse topological order and accumulates into the ``grad``
buffers of leaf tensors.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import ConfigurationError, NumericError, UsageError

DEFAULT_DTYPE = np.float32

_node_ids = itertools.count()


@dataclass(eq=False)
class Node:
    """One recorded operation: kind tag, inputs and the closure computing
    input gradients from the output gradient."""

    op: str
    inputs: tuple
    backward: Callable[[np.ndarray], tuple]
    context: dict = field(default_factory=dict)
    name: str = ""
    id: int = field(default_factory=lambda: next(_node_ids))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=""):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node: Optional[Node] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        backward(self, grad)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _record(out_data, op, inputs, backward_fn, name="", **context):
    out = Tensor(out_data, dtype=out_data.dtype)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, tuple(inputs), backward_fn, context, name)
    out.name = name
    return out


def _check_finite(arr, op, name=""):
    if not np.isfinite(arr).all():
        where = f" ({name})" if name else ""
        raise NumericError(f"non-finite input to {op}{where}")


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.inputs:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(loss: Tensor, grad=None):
    """Populate ``grad`` of every leaf reachable from ``loss``.

    ``loss`` must be a scalar unless an explicit output gradient is given.
    Gradients accumulate into existing buffers.
    """
    if grad is None:
        if loss.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    else:
        grad = np.asarray(grad, dtype=loss.dtype).reshape(loss.shape)
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor that requires grad")

    grads = {id(loss): grad}
    for t in reversed(_topological(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t.node.inputs, t.node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------- operations


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride=1, pad=None, name=""):
    """2D cross-correlation with zero padding.

    ``pad`` defaults to ``k // 2`` which keeps the spatial size for odd
    kernels at stride 1.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ConfigurationError(f"conv2d expects NCHW input and OIkk weight, got {x.shape} and {weight.shape}")
    co, ci, k, k2 = weight.shape
    if k != k2:
        raise ConfigurationError(f"conv2d needs square kernels, got {k}x{k2}")
    if x.shape[1] != ci:
        raise ConfigurationError(f"conv2d{' ' + name if name else ''}: input has {x.shape[1]} channels, weight expects {ci}")
    if bias is not None and bias.shape != (co,):
        raise ConfigurationError(f"conv2d bias shape {bias.shape} does not match {co} output channels")
    if stride < 1:
        raise ConfigurationError("stride must be >= 1")
    pad = k // 2 if pad is None else pad
    n, _, h, w = x.shape
    ho, wo = (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ConfigurationError(f"conv2d output would be empty for input {x.shape}")
    _check_finite(x.data, "conv2d", name)

    xd = x.data
    w2 = weight.data.reshape(co, -1)
    pointwise = k == 1 and stride == 1 and pad == 0
    if pointwise:
        out = np.matmul(w2, xd.reshape(n, ci, h * w)).reshape(n, co, h, w)
    else:
        cols = kernels.im2col(xd, k, stride, pad)
        out = (w2 @ cols).reshape(co, n, ho, wo).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)
    out = np.ascontiguousarray(out, dtype=np.result_type(xd, weight.data))

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def grad_fn(g):
        dx = dw = db = None
        if pointwise:
            g3 = g.reshape(n, co, h * w)
            if x.requires_grad:
                dx = np.matmul(w2.T, g3).reshape(x.shape)
            if weight.requires_grad:
                dw = np.einsum("nop,nip->oi", g3, xd.reshape(n, ci, h * w)).reshape(weight.shape)
        else:
            g2 = g.transpose(1, 0, 2, 3).reshape(co, -1)
            if weight.requires_grad:
                dw = (g2 @ kernels.im2col(xd, k, stride, pad).T).reshape(weight.shape)
            if x.requires_grad:
                dx = kernels.col2im(w2.T @ g2, x.shape, k, stride, pad)
        if bias is not None and bias.requires_grad:
            db = g.sum(axis=(0, 2, 3))
        return dx, dw, db

    return _record(out, "conv2d", inputs, grad_fn, name, k=k, stride=stride, pad=pad)


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, name=""):
    """One 3x3 kernel per channel, stride 1, zero padding 1."""
    if x.data.ndim != 4:
        raise ConfigurationError(f"depthwise_conv2d expects NCHW input, got {x.shape}")
    c = x.shape[1]
    if weight.shape != (c, 1, 3, 3):
        raise ConfigurationError(f"depthwise weight must be ({c}, 1, 3, 3), got {weight.shape}")
    if bias is not None and bias.shape != (c,):
        raise ConfigurationError(f"depthwise bias shape {bias.shape} does not match {c} channels")
    _check_finite(x.data, "depthwise_conv2d", name)
    dtype = np.result_type(x.data, weight.data)
    xd = x.data.astype(dtype, copy=False)
    w3 = weight.data.reshape(c, 3, 3).astype(dtype, copy=False)
    b = np.zeros(c, dtype) if bias is None else bias.data.astype(dtype, copy=False)
    out = kernels.depthwise_forward(xd, w3, b)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def grad_fn(g):
        dx, dw, db = kernels.depthwise_backward(xd, w3, g)
        return dx, dw.reshape(weight.shape), db

    return _record(out, "depthwise_conv2d", inputs, grad_fn, name)


def relu(x: Tensor, name=""):
    """max(0, x); the subgradient at exactly zero is taken as 0."""
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)
    return _record(out, "relu", (x,), lambda g: (g * mask,), name)


def pixel_shuffle(x: Tensor, r: int, name=""):
    """Rearrange (N, C*r*r, H, W) into (N, C, H*r, W*r)."""
    n, c, h, w = x.shape
    if r < 1 or c % (r * r):
        raise ConfigurationError(f"pixel_shuffle: {c} channels not divisible by r^2={r * r}")
    co = c // (r * r)
    out = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)

    def grad_fn(g):
        return (g.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w),)

    return _record(np.ascontiguousarray(out), "pixel_shuffle", (x,), grad_fn, name, r=r)


def pixel_unshuffle(x: Tensor, r: int, name=""):
    """Inverse of :func:`pixel_shuffle`."""
    n, c, hr, wr = x.shape
    if r < 1 or hr % r or wr % r:
        raise ConfigurationError(f"pixel_unshuffle: spatial size {hr}x{wr} not divisible by {r}")
    h, w = hr // r, wr // r
    out = x.data.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)

    def grad_fn(g):
        return (g.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, hr, wr),)

    return _record(np.ascontiguousarray(out), "pixel_unshuffle", (x,), grad_fn, name, r=r)


def concat_channels(inputs: Sequence[Tensor], name=""):
    """Stack along the channel axis in list order."""
    inputs = list(inputs)
    if not inputs:
        raise ConfigurationError("concat_channels needs at least one input")
    n, _, h, w = inputs[0].shape
    for t in inputs:
        if t.data.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ConfigurationError(f"concat_channels: {t.shape} does not match N,H,W of {inputs[0].shape}")
    out = np.concatenate([t.data for t in inputs], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in inputs])

    def grad_fn(g):
        return tuple(g[:, a:b] for a, b in zip(bounds[:-1], bounds[1:]))

    return _record(out, "concat_channels", inputs, grad_fn, name, bounds=bounds)


def slice_channels(x: Tensor, start: int, stop: int, name=""):
    out = np.ascontiguousarray(x.data[:, start:stop])

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _record(out, "slice_channels", (x,), grad_fn, name)


def add_scaled(a: Tensor, b: Tensor, alpha: float, name=""):
    """a + alpha * b."""
    if a.shape != b.shape:
        raise ConfigurationError(f"add_scaled: shape mismatch {a.shape} vs {b.shape}")
    out = a.data + alpha * b.data if alpha != 1.0 else a.data + b.data
    return _record(out, "add_scaled", (a, b), lambda g: (g, alpha * g if alpha != 1.0 else g), name, alpha=alpha)


def add(a: Tensor, b: Tensor, name=""):
    return add_scaled(a, b, 1.0, name)


def scale(x: Tensor, c: float, name=""):
    return _record(x.data * c, "scale", (x,), lambda g: (g * c,), name, c=c)


def add_channel_constant(x: Tensor, values, name=""):
    """Add a fixed per-channel offset (no gradient to the offset)."""
    shift = np.asarray(values, dtype=x.dtype).reshape(1, -1, 1, 1)
    if shift.shape[1] != x.shape[1]:
        raise ConfigurationError(f"offset has {shift.shape[1]} channels, input has {x.shape[1]}")
    return _record(x.data + shift, "add_channel_constant", (x,), lambda g: (g,), name)


def mul(a: Tensor, b: Tensor, name=""):
    if a.shape != b.shape:
        raise ConfigurationError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _record(ad * bd, "mul", (a, b), lambda g: (g * bd, g * ad), name)


def sum_all(x: Tensor, name=""):
    shape = x.shape
    return _record(np.asarray(x.data.sum(), dtype=x.dtype), "sum", (x,),
                   lambda g: (np.broadcast_to(g, shape).astype(g.dtype, copy=True),), name)


def mean_all(x: Tensor, name=""):
    count = x.size
    return scale(sum_all(x), 1.0 / count, name)


def l1_loss(pred: Tensor, target: Tensor, name="l1"):
    """Mean absolute difference; gradient sign(pred - target) / count."""
    if pred.shape != target.shape:
        raise ConfigurationError(f"l1_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    count = diff.size
    value = np.asarray(np.abs(diff).mean(dtype=np.float64), dtype=pred.dtype)

    def grad_fn(g):
        s = np.sign(diff) * (g / count)
        return s.astype(diff.dtype, copy=False), -s.astype(diff.dtype, copy=False)

    return _record(value, "l1_loss", (pred, target), grad_fn, name)

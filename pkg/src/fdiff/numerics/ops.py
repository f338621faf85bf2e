"""Differentiable operations on :class:`~fdiff.numerics.tensor.Tensor`.

Broadcasting is deliberately narrow: operands must have equal shapes, one
of them may be a 0-d scalar, or (rank >= 4) one operand may carry size-1
axes in the trailing three spatial positions, which is the channel-weight
pattern ``[N, C, 1, 1, 1]`` against ``[N, C, D, H, W]``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from fdiff.errors import DegenerateBatch, InvalidShape, ShapeMismatch
from fdiff.numerics.tensor import Tensor

__all__ = [
    "add", "sub", "mul", "div", "neg", "ew_binary", "ew_unary",
    "exp", "log", "sigmoid", "relu", "square", "clip",
    "sum", "mean", "prod", "reshape", "getitem", "concat", "matmul", "linear",
    "conv3d", "batchnorm3d", "global_avg_pool3d", "upsample_nearest",
]


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    if len(a) == 0 or len(b) == 0:
        return a or b
    if len(a) != len(b):
        raise ShapeMismatch(f"incompatible shapes {a} and {b}")
    out = []
    nd = len(a)
    for i, (m, n) in enumerate(zip(a, b)):
        if m == n:
            out.append(m)
        elif nd >= 4 and i >= nd - 3 and (m == 1 or n == 1):
            out.append(max(m, n))
        else:
            raise ShapeMismatch(f"incompatible shapes {a} and {b}")
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    axes = tuple(i for i, (m, n) in enumerate(zip(g.shape, shape)) if n == 1 and m != 1)
    return g.sum(axis=axes, keepdims=True)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape(a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _wrap(a, b)
    b = _wrap(b, a)
    _broadcast_shape(a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape(a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _wrap(a, b)
    b = _wrap(b, a)
    _broadcast_shape(a.shape, b.shape)
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return Tensor._from_op(out, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def ew_binary(a, b, op: str) -> Tensor:
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    raise ValueError(f"unknown binary op {op!r}")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g / a.data,), "log")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _stable_sigmoid(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = a.data > 0
    return Tensor._from_op(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def square(a: Tensor) -> Tensor:
    return Tensor._from_op(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor._from_op(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


_UNARY = {"sigmoid": sigmoid, "relu": relu, "exp": exp, "neg": neg, "log": log, "square": square}


def ew_unary(a: Tensor, op: str) -> Tensor:
    try:
        return _UNARY[op](a)
    except KeyError:
        raise ValueError(f"unknown unary op {op!r}") from None


# ---------------------------------------------------------------- reductions

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (a,), backward, "mean")


def prod(a: Tensor, axis: int = 0) -> Tensor:
    """Product along one axis; gradient uses exclusive products (zero safe)."""
    axis = axis % a.ndim
    x = np.moveaxis(a.data, axis, 0)
    out = np.prod(x, axis=0)

    def backward(g):
        m = x.shape[0]
        ones = np.ones_like(x[:1])
        before = np.concatenate([ones, np.cumprod(x[:-1], axis=0)], axis=0) if m > 1 else ones
        after = np.concatenate([np.cumprod(x[::-1][:-1], axis=0)[::-1], ones], axis=0) if m > 1 else ones
        return (np.moveaxis(g[None] * before * after, 0, axis),)

    return Tensor._from_op(out, (a,), backward, "prod")


# ---------------------------------------------------------------- shape ops

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(Ellipsis))) or i is None for i in items)


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return Tensor._from_op(np.array(out), (a,), backward, "getitem")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            parts.append(g[tuple(sl)])
        return parts

    return Tensor._from_op(data, tensors, backward, "concat")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul shapes {a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._from_op(a.data @ b.data, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for ``x: [N, in]``, ``w: [in, out]``, ``b: [out]``."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"linear shapes {x.shape} @ {w.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        grads = [g @ w.data.T, x.data.T @ g]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    return Tensor._from_op(out, parents, backward, "linear")


# ---------------------------------------------------------------- convolution

def _conv_shift_forward(x: np.ndarray, w: np.ndarray, p: int):
    """Stride-1 cross-correlation on the flattened padded grid.

    With the padded volume flattened to ``[C_in, N*Dp*Hp*Wp]`` every kernel
    offset is a constant shift, so one GEMM against all offsets followed by
    ``k**3`` shifted adds computes the output without an im2col copy.
    """
    n, ci, d, h, wd = x.shape
    co, _, k, _, _ = w.shape
    dp, hp, wp = d + 2 * p, h + 2 * p, wd + 2 * p
    xp = np.zeros((ci, n, dp, hp, wp), dtype=x.dtype)
    xp[:, :, p:p + d, p:p + h, p:p + wd] = x.transpose(1, 0, 2, 3, 4)
    xf = xp.reshape(ci, -1)
    lt = xf.shape[1]
    offsets = [i * hp * wp + j * wp + l for i in range(k) for j in range(k) for l in range(k)]
    span = lt - offsets[-1]
    wstack = w.transpose(2, 3, 4, 0, 1).reshape(k ** 3 * co, ci)
    z = wstack @ xf
    out = np.zeros((co, lt), dtype=x.dtype)
    for o, off in enumerate(offsets):
        out[:, :span] += z[o * co:(o + 1) * co, off:off + span]
    do, ho, wo = dp - k + 1, hp - k + 1, wp - k + 1
    y = out.reshape(co, n, dp, hp, wp)[:, :, :do, :ho, :wo].transpose(1, 0, 2, 3, 4)
    return np.ascontiguousarray(y), (xf, offsets, span, (dp, hp, wp))


def _conv_shift_backward(g: np.ndarray, w: np.ndarray, x_shape, p: int, ctx):
    xf, offsets, span, (dp, hp, wp) = ctx
    n, ci, d, h, wd = x_shape
    co, _, k, _, _ = w.shape
    do, ho, wo = g.shape[2:]
    gg = np.zeros((co, n, dp, hp, wp), dtype=g.dtype)
    gg[:, :, :do, :ho, :wo] = g.transpose(1, 0, 2, 3, 4)
    gl = gg.reshape(co, -1)[:, :span]
    dw = np.empty((co, ci, k ** 3), dtype=g.dtype)
    for o, off in enumerate(offsets):
        dw[:, :, o] = gl @ xf[:, off:off + span].T
    wt = np.ascontiguousarray(w.transpose(2, 3, 4, 1, 0).reshape(k ** 3 * ci, co))
    y = wt @ gl
    dxf = np.zeros_like(xf)
    for o, off in enumerate(offsets):
        dxf[:, off:off + span] += y[o * ci:(o + 1) * ci]
    dx = dxf.reshape(ci, n, dp, hp, wp)[:, :, p:p + d, p:p + h, p:p + wd].transpose(1, 0, 2, 3, 4)
    return np.ascontiguousarray(dx), dw.reshape(w.shape)


def _conv_im2col_forward(x: np.ndarray, w: np.ndarray, s: int, p: int):
    n, ci = x.shape[:2]
    co, _, k, _, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))[:, :, ::s, ::s, ::s]
    do, ho, wo = win.shape[2:5]
    cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(n * do * ho * wo, ci * k ** 3)
    out = cols @ w.reshape(co, -1).T
    y = out.reshape(n, do, ho, wo, co).transpose(0, 4, 1, 2, 3)
    return np.ascontiguousarray(y), cols


def _conv_im2col_backward(g, w, x_shape, s, p, cols):
    n, ci, d, h, wd = x_shape
    co, _, k, _, _ = w.shape
    do, ho, wo = g.shape[2:]
    g2 = g.transpose(0, 2, 3, 4, 1).reshape(-1, co)
    dw = (g2.T @ cols).reshape(w.shape)
    dcols = (g2 @ w.reshape(co, -1)).reshape(n, do, ho, wo, ci, k, k, k)
    dxp = np.zeros((n, ci, d + 2 * p, h + 2 * p, wd + 2 * p), dtype=g.dtype)
    for i in range(k):
        for j in range(k):
            for l in range(k):
                dxp[:, :, i:i + s * do:s, j:j + s * ho:s, l:l + s * wo:s] += \
                    dcols[..., i, j, l].transpose(0, 4, 1, 2, 3)
    return np.ascontiguousarray(dxp[:, :, p:p + d, p:p + h, p:p + wd]), dw


def conv3d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """3-D cross-correlation.

    Args:
        x: input ``[N, C_in, D, H, W]`` or unbatched ``[C_in, D, H, W]``.
        w: weights ``[C_out, C_in, k, k, k]`` with odd ``k``.
        bias: optional ``[C_out]``.
    """
    if x.ndim == 4:
        y = conv3d(reshape(x, (1,) + x.shape), w, bias, stride, padding)
        return reshape(y, y.shape[1:])
    if x.ndim != 5 or w.ndim != 5:
        raise InvalidShape(f"conv3d expects 5-D input and weight, got {x.shape}, {w.shape}")
    k = w.shape[2]
    if w.shape[2:] != (k, k, k) or k % 2 == 0:
        raise InvalidShape(f"kernel must be cubic with odd size, got {w.shape[2:]}")
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, weight expects {w.shape[1]}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise ShapeMismatch(f"bias shape {bias.shape} != ({w.shape[0]},)")
    if stride < 1 or padding < 0:
        raise InvalidShape("stride must be >= 1 and padding >= 0")
    if any(s + 2 * padding < k for s in x.shape[2:]):
        raise InvalidShape(f"kernel {k} larger than padded input {x.shape[2:]}")

    xd, wd = x.data, w.data.astype(x.dtype, copy=False)
    if stride == 1:
        out, ctx = _conv_shift_forward(xd, wd, padding)
    else:
        out, ctx = _conv_im2col_forward(xd, wd, stride, padding)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1, 1)

    def backward(g):
        if stride == 1:
            dx, dw = _conv_shift_backward(g, wd, xd.shape, padding, ctx)
        else:
            dx, dw = _conv_im2col_backward(g, wd, xd.shape, stride, padding, ctx)
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return grads

    parents = (x, w) if bias is None else (x, w, bias)
    return Tensor._from_op(out, parents, backward, "conv3d")


# ---------------------------------------------------------------- normalisation / pooling

def batchnorm3d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
                train: bool, eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    """Per-channel batch normalisation; channel axis is 1 for 5-D input, 0 for 4-D.

    In train mode the batch statistics are used and the running buffers are
    updated in place (unbiased variance, PyTorch convention). In eval mode
    the running buffers normalise.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    caxis = 1 if x.ndim == 5 else 0
    c = x.shape[caxis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"batchnorm parameters must have shape ({c},)")
    axes = tuple(a for a in range(x.ndim) if a != caxis)
    bshape = [1] * x.ndim
    bshape[caxis] = c
    count = x.size // c
    if train:
        if count <= 1:
            raise DegenerateBatch("batch statistics need more than one element per channel")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (count / (count - 1))
    else:
        mu, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype).reshape(bshape)
    xhat = (x.data - np.asarray(mu, dtype=x.dtype).reshape(bshape)) * inv
    g_ = gamma.data.astype(x.dtype, copy=False).reshape(bshape)
    out = xhat * g_ + beta.data.astype(x.dtype, copy=False).reshape(bshape)

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * g_
        if train:
            s1 = dxhat.sum(axis=axes, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            dx = inv / count * (count * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * inv
        return dx, dgamma.astype(gamma.dtype), dbeta.astype(beta.dtype)

    return Tensor._from_op(out, (x, gamma, beta), backward, "batchnorm3d")


def global_avg_pool3d(x: Tensor) -> Tensor:
    """Mean over the three trailing spatial axes, keeping them as size 1."""
    if x.ndim < 4:
        raise InvalidShape(f"expected at least 4 dims, got {x.shape}")
    return mean(x, axis=(-3, -2, -1), keepdims=True)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    lead = x.shape[:-3]
    d, h, w = x.shape[-3:]
    f = factor
    idx = (slice(None),) * len(lead)
    out = np.broadcast_to(x.data[idx + (slice(None), None, slice(None), None, slice(None), None)],
                          lead + (d, f, h, f, w, f)).reshape(lead + (d * f, h * f, w * f))

    def backward(g):
        return (g.reshape(lead + (d, f, h, f, w, f)).sum(axis=(-5, -3, -1)),)

    return Tensor._from_op(np.ascontiguousarray(out), (x,), backward, "upsample_nearest")

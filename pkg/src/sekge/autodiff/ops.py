"""Differentiable primitives.

Each function computes its forward value with numpy and registers a
backward rule returning one gradient per tensor operand.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import ShapeError
from .tensor import Tensor, as_tensor, make_result


def _pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    return as_tensor(a), as_tensor(b)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")
    return make_result(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")
    return make_result(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "mul")
    return make_result(
        a.data * b.data, (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return make_result(
        a.data @ b.data, (a, b),
        lambda g: (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        ),
    )


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return make_result(a.data.T.copy(), (a,), lambda g: (g.T,))


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(out, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return make_result(out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make_result(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def _index_reduce(ufunc, out, index, values):
    """``ufunc.at(out, index, values)`` for a 1-d row index, via sort + reduceat.

    Rows are reduced in a fixed (stable-sorted) order, so results are
    deterministic, and this is much faster than ``ufunc.at`` for wide rows.
    """
    index = np.asarray(index)
    if index.ndim != 1 or index.dtype == bool:
        ufunc.at(out, index, values)
        return out
    if len(index) == 0:
        return out
    order = np.argsort(index, kind="stable")
    sorted_idx = index[order]
    starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
    reduced = ufunc.reduceat(values[order], starts, axis=0)
    rows = sorted_idx[starts]
    out[rows] = ufunc(out[rows], reduced)
    return out


def gather(a, index) -> Tensor:
    """``a[index]`` (row gather for an integer array index)."""
    a = as_tensor(a)
    out = a.data[index]

    def backward(g):
        return (_index_reduce(np.add, np.zeros_like(a.data), index, g),)

    return make_result(out, (a,), backward)


def scatter_add(src, index, n_rows: int) -> Tensor:
    """Rows of ``src`` summed into an ``n_rows``-row output at ``index``."""
    src = as_tensor(src)
    index = np.asarray(index, dtype=np.int64)
    if index.shape != src.shape[:1]:
        raise ShapeError(f"scatter_add: index shape {index.shape} vs source {src.shape}")
    out = np.zeros((n_rows,) + src.shape[1:], dtype=src.dtype)
    _index_reduce(np.add, out, index, src.data)
    return make_result(out, (src,), lambda g: (g[index],))


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return make_result(s, (a,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def segment_softmax(scores, segments, n_segments: int) -> Tensor:
    """Softmax of a 1-d score vector within each group of equal segment ids."""
    scores = as_tensor(scores)
    seg = np.asarray(segments, dtype=np.int64)
    if scores.ndim != 1 or seg.shape != scores.shape:
        raise ShapeError(f"segment_softmax: scores {scores.shape} vs segments {seg.shape}")
    x = scores.data
    mx = np.full(n_segments, -np.inf, dtype=x.dtype)
    _index_reduce(np.maximum, mx, seg, x)
    e = np.exp(x - mx[seg])
    den = np.bincount(seg, weights=e, minlength=n_segments).astype(x.dtype)
    alpha = e / den[seg]

    def backward(g):
        inner = np.bincount(seg, weights=g * alpha, minlength=n_segments).astype(x.dtype)
        return (alpha * (g - inner[seg]),)

    return make_result(alpha, (scores,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make_result(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return make_result(t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_result(a.data * mask, (a,), lambda g: (g * mask,))


def conv2d(x, weight, bias=None, padding: int = 0) -> Tensor:
    """Stride-1 cross-correlation of ``(B, C, H, W)`` by ``(O, C, k, k)`` filters."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: incompatible shapes {x.shape} and {weight.shape}")
    kh, kw = weight.shape[2:]
    p = int(padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError(f"conv2d: kernel {weight.shape} larger than padded input {xp.shape}")
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # B, C, H', W', kh, kw
    out = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"conv2d: bias shape {bias.shape} vs {weight.shape[0]} filters")
        out = out + bias.data[None, :, None, None]
        parents = parents + (bias,)
    out = np.ascontiguousarray(out)
    H, W = out.shape[2:]

    def backward(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + H, j:j + W] += np.tensordot(
                        g, weight.data[:, :, i, j], axes=([1], [0])
                    ).transpose(0, 3, 1, 2)
            gx = gxp[:, :, p:p + x.shape[2], p:p + x.shape[3]] if p else gxp
        grads = (gx, gw)
        if bias is not None:
            grads = grads + (g.sum(axis=(0, 2, 3)),)
        return grads

    return make_result(out, parents, backward)


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Normalize over every axis except axis 1 (the channel/feature axis).

    In training mode batch statistics are used and the running buffers are
    updated in place; in evaluation mode the running buffers are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batch_norm: input {x.shape} vs affine {gamma.shape}/{beta.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, C) + (1,) * (x.ndim - 2)
    n = x.size // C
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype).reshape(bshape)
    xhat = (x.data - mu.reshape(bshape)) * inv_std
    g_r, b_r = gamma.data.reshape(bshape), beta.data.reshape(bshape)
    out = (xhat * g_r + b_r).astype(x.dtype, copy=False)

    def backward(g):
        gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gb = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * g_r
            if training:
                gx = inv_std / n * (
                    n * gxhat
                    - gxhat.sum(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
                )
            else:
                gx = gxhat * inv_std
        return gx, gg, gb

    return make_result(out, (x, gamma, beta), backward)


def dropout(x, p: float, rng: np.random.Generator, training: bool = True,
            channelwise: bool = False) -> Tensor:
    """Inverted dropout; ``channelwise`` drops whole feature maps of a 4-d input."""
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    shape = x.shape[:2] + (1,) * (x.ndim - 2) if channelwise else x.shape
    mask = (rng.random(shape) >= p).astype(x.dtype) / (1.0 - p)
    return make_result(x.data * mask, (x,), lambda g: (_unbroadcast(g * mask, x.shape),))


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against ``targets``."""
    logits = as_tensor(logits)
    y = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: logits {logits.shape} vs targets {y.shape}")
    x = logits.data
    loss = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    n = x.size
    out = np.asarray(loss.mean(), dtype=x.dtype)

    def backward(g):
        s = 0.5 * (1.0 + np.tanh(0.5 * x))
        return (g * (s - y) / n,)

    return make_result(out, (logits,), backward)

"""Differentiable operations.

Each op computes its forward value with numpy and registers a closure mapping
the output gradient to one gradient per input (``None`` for inputs that do not
need one).  Broadcasting is plain numpy broadcasting; backward sums gradients
back down to each operand's shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import BoundsError, DimensionError
from .tensor import Tensor, as_tensor, make

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} invalid for a {ndim}-d tensor")
    return axis % ndim


def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a} and {b} do not broadcast") from None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2], "matmul")
    ad, bd = a.data, b.data
    if bd.ndim == 2 and ad.ndim > 2:
        # shared weight: one GEMM over all leading rows
        k, n = bd.shape
        out = (ad.reshape(-1, k) @ bd).reshape(ad.shape[:-1] + (n,))

        def backward(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None
            gb = ad.reshape(-1, k).T @ g2 if b.requires_grad else None
            return ga, gb

        return make(out, (a, b), backward, "matmul")
    if ad.ndim == 2 and bd.ndim > 2:
        out = np.matmul(ad, bd)

        def backward(g):
            ga = None
            if a.requires_grad:
                lead = tuple(range(g.ndim - 2))
                ga = np.tensordot(g, bd, axes=(lead + (g.ndim - 1,), lead + (bd.ndim - 1,)))
            gb = np.matmul(ad.T, g) if b.requires_grad else None
            return ga, gb

        return make(out, (a, b), backward, "matmul")
    out = np.matmul(ad, bd)

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape) if b.requires_grad else None
        return ga, gb

    return make(out, (a, b), backward, "matmul")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make(a.data - b.data, (a, b), backward, "sub")


def scale(x: Tensor, c) -> Tensor:
    """Multiply by a constant scalar or a constant broadcastable array."""
    x = as_tensor(x)
    c = np.asarray(c, dtype=np.float64)
    _broadcast_shape(x.shape, c.shape, "scale")
    shape = x.shape

    def backward(g):
        return (_unbroadcast(g * c, shape),)

    return make(x.data * c, (x,), backward, "scale")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def backward(g):
        return (g * (out > 0),)

    return make(out, (x,), backward, "relu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _norm_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make(y, (x,), backward, "softmax")


def max_reduce(x: Tensor, axis: int, keepdims: bool = True, return_indices: bool = False):
    """Maximum along ``axis``; the gradient goes to the first (lowest-index) maximiser."""
    axis = _norm_axis(axis, x.ndim)
    if x.shape[axis] < 1:
        raise DimensionError("max_reduce over an empty axis")
    xd = x.data
    top = xd.max(axis=axis, keepdims=True)
    shape = x.shape

    def argmax():
        return np.expand_dims(np.argmax(xd == top, axis=axis), axis)

    def backward(g):
        gx = np.zeros(shape)
        np.put_along_axis(gx, argmax(), g if keepdims else np.expand_dims(g, axis), axis=axis)
        return (gx,)

    res = make(top if keepdims else np.squeeze(top, axis=axis), (x,), backward, "max_reduce")
    if return_indices:
        return res, np.squeeze(argmax(), axis=axis)
    return res


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat of an empty list")
    if len(parts) == 1:
        return parts[0]
    ndim = parts[0].ndim
    axis = _norm_axis(axis, ndim)
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != ndim or any(p.shape[i] != ref[i] for i in range(ndim) if i != axis):
            raise DimensionError(f"concat along axis {axis}: {ref} vs {p.shape}")
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward, "concat")


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list:
    """Inverse of :func:`concat`: consecutive slices of the given extents."""
    axis = _norm_axis(axis, x.ndim)
    if sum(sizes) != x.shape[axis]:
        raise DimensionError(f"split sizes {list(sizes)} do not cover extent {x.shape[axis]}")
    out = []
    start = 0
    for n in sizes:
        out.append(slice_axis(x, start, start + n, axis))
        start += n
    return out


def slice_axis(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    axis = _norm_axis(axis, x.ndim)
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape)
        gx[sl] = g
        return (gx,)

    return make(x.data[sl].copy(), (x,), backward, "slice")


def gather_rows(x: Tensor, idx) -> Tensor:
    """Row lookup along axis -2 with leading batch axes shared by ``x`` and ``idx``.

    ``x`` has shape ``(*batch, N, C)`` and ``idx`` shape ``(*batch, *rest)``;
    the result has shape ``(*batch, *rest, C)``.  Backward scatter-adds.
    """
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError("gather_rows indices must be integers")
    if x.ndim < 2:
        raise DimensionError("gather_rows needs a tensor of rank >= 2")
    batch = x.shape[:-2]
    n, c = x.shape[-2], x.shape[-1]
    if idx.shape[: len(batch)] != batch:
        raise DimensionError(f"index batch extents {idx.shape} do not match tensor {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise BoundsError(f"gather index out of range [0, {n})")
    nb = int(np.prod(batch)) if batch else 1
    flat_idx = (idx.reshape(nb, -1) + (np.arange(nb) * n)[:, None]).reshape(-1)
    out = x.data.reshape(nb * n, c)[flat_idx].reshape(idx.shape + (c,))
    shape = x.shape

    def backward(g):
        gx = np.zeros((nb * n, c))
        np.add.at(gx, flat_idx, g.reshape(-1, c))
        return (gx.reshape(shape),)

    return make(out, (x,), backward, "gather_rows")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    orig = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {orig} to {tuple(shape)}") from None

    def backward(g):
        return (g.reshape(orig),)

    return make(out, (x,), backward, "reshape")


def swapaxes(x: Tensor, a: int = -1, b: int = -2) -> Tensor:
    def backward(g):
        return (np.swapaxes(g, a, b),)

    return make(np.swapaxes(x.data, a, b), (x,), backward, "swapaxes")


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return swapaxes(x, -1, -2)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if _broadcast_shape(x.shape, shape, "broadcast_to") != shape:
        raise DimensionError(f"cannot broadcast {x.shape} to {shape}")
    orig = x.shape

    def backward(g):
        return (_unbroadcast(g, orig),)

    return make(np.broadcast_to(x.data, shape).copy(), (x,), backward, "broadcast_to")


def reduce_sum(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    if axis is None:
        out = np.asarray(x.data.sum())

        def backward(g):
            return (np.full(shape, float(g)),)
    else:
        axis = _norm_axis(axis, x.ndim)
        out = x.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            gk = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gk, shape).copy(),)

    return make(out, (x,), backward, "sum")


def mean(x: Tensor) -> Tensor:
    return scale(reduce_sum(x), 1.0 / x.size)


@dataclass
class BatchNormState:
    """Running statistics of one batch-norm layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def fresh(cls, channels: int) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, mode: str = "train") -> Tensor:
    """Per-channel normalisation over every axis but the last.

    In ``train`` mode batch statistics are used and the running statistics are
    updated (unbiased variance, momentum 0.1); ``eval`` uses the running ones.
    """
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm affine params must have shape ({c},)")
    axes = tuple(range(x.ndim - 1))
    gd, bd = gamma.data, beta.data
    if mode == "train":
        n = x.size // c
        x2 = x.data.reshape(n, c)
        mu = x2.mean(axis=0)
        xc = x2 - mu
        var = np.einsum("ij,ij->j", xc, xc) / n
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = xc * inv_std
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        unbiased = var * n / (n - 1) if n > 1 else var
        state.running_var = (1 - m) * state.running_var + m * unbiased
        out = (xhat * gd + bd).reshape(x.shape)

        def backward(g):
            g2 = g.reshape(n, c)
            gx = None
            if x.requires_grad:
                dxhat = g2 * gd
                s1 = dxhat.sum(axis=0)
                s2 = np.einsum("ij,ij->j", dxhat, xhat)
                gx = (inv_std * (dxhat - s1 / n - xhat * (s2 / n))).reshape(x.shape)
            return gx, np.einsum("ij,ij->j", g2, xhat), g2.sum(axis=0)
    elif mode == "eval":
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        mean_ = state.running_mean
        mul = gd * inv_std
        out = x.data * mul + (bd - mean_ * mul)

        def backward(g):
            xhat = (x.data - mean_) * inv_std
            return g * mul, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        raise ValueError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")
    return make(out, (x, gamma, beta), backward, "batch_norm")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row-wise softmax."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} / labels {labels.shape} mismatch")
    b, n_cls = logits.shape
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(b)
    loss = np.asarray((lse - z[rows, labels]).mean())

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (float(g) / b),)

    return make(loss, (logits,), backward, "cross_entropy")

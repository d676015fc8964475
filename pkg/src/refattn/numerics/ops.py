"""Elementwise, reduction and shape operations on :class:`NdArray`."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..errors import ShapeError
from .tensor import NdArray, as_array

_result = NdArray._result


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


# -- arithmetic ------------------------------------------------------------

def add(a, b) -> NdArray:
    a, b = as_array(a), as_array(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> NdArray:
    a, b = as_array(a), as_array(b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: cannot broadcast {a.shape} with {b.shape}") from exc
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> NdArray:
    a, b = as_array(a), as_array(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> NdArray:
    a, b = as_array(a), as_array(b)
    try:
        out = a.data / b.data
    except ValueError as exc:
        raise ShapeError(f"div: cannot broadcast {a.shape} with {b.shape}") from exc
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)), "div")


def neg(a) -> NdArray:
    a = as_array(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> NdArray:
    a = as_array(a)
    p = float(p)
    out = a.data ** p
    return _result(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),), "power")


def square(a) -> NdArray:
    a = as_array(a)
    return _result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def exp(a) -> NdArray:
    a = as_array(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> NdArray:
    a = as_array(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> NdArray:
    a = as_array(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def abs_(a) -> NdArray:
    a = as_array(a)
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def tanh(a) -> NdArray:
    a = as_array(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a) -> NdArray:
    a = as_array(a)
    out = _sigmoid_np(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a) -> NdArray:
    a = as_array(a)
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope: float = 0.2) -> NdArray:
    a = as_array(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return _result(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def gelu(a) -> NdArray:
    """tanh approximation of GELU, built from recorded primitives."""
    a = as_array(a)
    inner = mul(add(a, mul(power(a, 3.0), 0.044715)), math.sqrt(2.0 / math.pi))
    return mul(mul(a, 0.5), add(tanh(inner), 1.0))


def matmul(a, b) -> NdArray:
    a, b = as_array(a), as_array(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands with ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: incompatible batch dims {a.shape} @ {b.shape}") from exc

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(out, (a, b), backward, "matmul")


# -- reductions --------------------------------------------------------------

def sum_(a, axis=None, keepdims: bool = False) -> NdArray:
    a = as_array(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> NdArray:
    a = as_array(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(sum_(a, axis=axes, keepdims=keepdims), 1.0 / count)


def norm(a) -> NdArray:
    """Frobenius norm of the whole array; the subgradient at zero is 0."""
    a = as_array(a)
    n = float(np.sqrt(np.sum(a.data * a.data)))

    def backward(g):
        if n == 0.0:
            return (np.zeros_like(a.data),)
        return (g * a.data / n,)

    return _result(np.array(n), (a,), backward, "norm")


def softmax(a, axis: int = -1) -> NdArray:
    a = as_array(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), backward, "softmax")


def l2_normalize(a, axis: int = 0, eps: float = 1e-12) -> NdArray:
    """x / max(||x||, eps) along ``axis``."""
    a = as_array(a)
    n = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    big = n > eps
    d = np.where(big, n, eps)
    out = a.data / d

    def backward(g):
        proj = (g * out).sum(axis=axis, keepdims=True)
        return (np.where(big, (g - out * proj) / d, g / eps),)

    return _result(out, (a,), backward, "l2_normalize")


def layer_norm(a, gamma, beta, axis: int = -1, eps: float = 1e-5) -> NdArray:
    a = as_array(a)
    centered = sub(a, mean(a, axis=axis, keepdims=True))
    var = mean(square(centered), axis=axis, keepdims=True)
    return add(mul(div(centered, sqrt(add(var, eps))), gamma), beta)


# -- shape manipulation ------------------------------------------------------

def reshape(a, shape) -> NdArray:
    a = as_array(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from exc
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> NdArray:
    a = as_array(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, key) -> NdArray:
    a = as_array(a)
    out = np.array(a.data[key])

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _result(out, (a,), backward, "getitem")


def take(a, indices, axis: int = 0) -> NdArray:
    """Integer gather along ``axis`` (repeated indices accumulate in backward)."""
    a = as_array(a)
    idx = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim
    out = np.take(a.data, idx, axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(idx.ndim)))
        np.add.at(moved, idx, gm)
        return (full,)

    return _result(out, (a,), backward, "take")


def concat(arrays: Sequence, axis: int = 0) -> NdArray:
    arrays = [as_array(x) for x in arrays]
    try:
        out = np.concatenate([x.data for x in arrays], axis=axis)
    except ValueError as exc:
        shapes = ", ".join(str(x.shape) for x in arrays)
        raise ShapeError(f"concat along axis {axis}: incompatible shapes {shapes}") from exc
    splits = np.cumsum([x.shape[axis] for x in arrays])[:-1]
    return _result(out, arrays, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def pad2d(a, top: int, bottom: int, left: int, right: int) -> NdArray:
    """Zero-pad the last two dimensions."""
    a = as_array(a)
    widths = [(0, 0)] * (a.ndim - 2) + [(top, bottom), (left, right)]
    out = np.pad(a.data, widths)
    h, w = a.shape[-2:]
    return _result(out, (a,), lambda g: (g[..., top:top + h, left:left + w],), "pad2d")


def roll(a, shift, axis) -> NdArray:
    a = as_array(a)
    out = np.roll(a.data, shift, axis=axis)
    back = tuple(-s for s in shift) if isinstance(shift, (tuple, list)) else -shift
    return _result(out, (a,), lambda g: (np.roll(g, back, axis=axis),), "roll")


def upsample_nearest(a, factor: int) -> NdArray:
    """Nearest-neighbour upsampling of the last two dims of a [C,H,W] array."""
    a = as_array(a)
    out = np.repeat(np.repeat(a.data, factor, axis=-2), factor, axis=-1)
    c, h, w = a.shape

    def backward(g):
        return (g.reshape(c, h, factor, w, factor).sum(axis=(2, 4)),)

    return _result(out, (a,), backward, "upsample_nearest")


# -- operator sugar ----------------------------------------------------------

NdArray.__add__ = add
NdArray.__radd__ = lambda self, other: add(other, self)
NdArray.__sub__ = sub
NdArray.__rsub__ = lambda self, other: sub(other, self)
NdArray.__mul__ = mul
NdArray.__rmul__ = lambda self, other: mul(other, self)
NdArray.__truediv__ = div
NdArray.__rtruediv__ = lambda self, other: div(other, self)
NdArray.__neg__ = neg
NdArray.__pow__ = power
NdArray.__matmul__ = matmul
NdArray.__getitem__ = getitem
NdArray.sum = sum_
NdArray.mean = mean
NdArray.reshape = lambda self, *shape: reshape(self, shape[0] if len(shape) == 1 else shape)
NdArray.transpose = transpose

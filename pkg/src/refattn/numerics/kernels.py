"""Spatial kernels: convolution, its transpose, patch unfolding, bilinear sampling.

All spatial arrays are [C, H, W]; out-of-bounds reads are zeros.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .tensor import NdArray, as_array

_result = NdArray._result


def _out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """[C,H,W] -> [C*kh*kw, Ho*Wo]; row index is c*kh*kw + i*kw + j."""
    c = x.shape[0]
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    return win.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, ho * wo)


def col2im(cols: np.ndarray, shape: tuple, kh: int, kw: int, stride: int,
           padding: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back onto a [C,H,W] grid."""
    c, h, w = shape
    ho = _out_size(h, kh, stride, padding)
    wo = _out_size(w, kw, stride, padding)
    out = np.zeros((c, h + 2 * padding, w + 2 * padding))
    cols = cols.reshape(c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += cols[:, i, j]
    return out[:, padding:padding + h, padding:padding + w]


def _check_conv(x_shape, w_shape, stride, padding):
    if len(x_shape) != 3 or len(w_shape) != 4:
        raise ShapeError(f"conv2d expects input [C,H,W] and weight [Co,Ci,kh,kw], "
                         f"got {x_shape} and {w_shape}")
    if x_shape[0] != w_shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x_shape} vs weight {w_shape}")
    kh, kw = w_shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d needs odd kernel sizes, got weight {w_shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    ho = _out_size(x_shape[1], kh, stride, padding)
    wo = _out_size(x_shape[2], kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty: input {x_shape}, weight {w_shape}")
    return ho, wo


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> NdArray:
    """Cross-correlation of x [Ci,H,W] with weight [Co,Ci,kh,kw] plus bias [Co]."""
    x, weight = as_array(x), as_array(weight)
    ho, wo = _check_conv(x.shape, weight.shape, stride, padding)
    co, ci, kh, kw = weight.shape
    cols = im2col(x.data, kh, kw, stride, padding)
    w2 = weight.data.reshape(co, -1)
    out = (w2 @ cols).reshape(co, ho, wo)
    parents = [x, weight]
    if bias is not None:
        bias = as_array(bias)
        if bias.shape != (co,):
            raise ShapeError(f"conv2d bias shape {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data[:, None, None]
        parents.append(bias)

    def backward(g):
        g2 = g.reshape(co, ho * wo)
        gx = col2im(w2.T @ g2, x.shape, kh, kw, stride, padding)
        gw = (g2 @ cols.T).reshape(weight.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=1))
        return grads

    return _result(out, parents, backward, "conv2d")


def conv_transpose2d(g, weight, stride: int, padding: int, out_hw: tuple) -> NdArray:
    """Adjoint of :func:`conv2d` w.r.t. its input.

    Maps g [Co,Ho,Wo] to [Ci,H,W] with (H, W) = ``out_hw``; differentiable in
    both ``g`` and ``weight``.
    """
    g, weight = as_array(g), as_array(weight)
    co, ci, kh, kw = weight.shape
    in_shape = (ci,) + tuple(out_hw)
    ho, wo = _check_conv(in_shape, weight.shape, stride, padding)
    if g.shape != (co, ho, wo):
        raise ShapeError(f"conv_transpose2d: input {g.shape} does not fit weight {weight.shape} "
                         f"and output size {out_hw}")
    w2 = weight.data.reshape(co, -1)
    g2 = g.data.reshape(co, ho * wo)
    out = col2im(w2.T @ g2, in_shape, kh, kw, stride, padding)

    def backward(u):
        cols = im2col(u, kh, kw, stride, padding)
        gg = (w2 @ cols).reshape(g.shape)
        gw = (g2 @ cols.T).reshape(weight.shape)
        return gg, gw

    return _result(out, (g, weight), backward, "conv_transpose2d")


def unfold(x, k: int, padding: int = 0) -> NdArray:
    """Sliding k x k patches of x [C,H,W] as columns of a [C*k*k, Ho*Wo] array."""
    x = as_array(x)
    if k % 2 == 0:
        raise ShapeError(f"unfold needs an odd patch size, got {k}")
    if x.ndim != 3:
        raise ShapeError(f"unfold expects [C,H,W], got {x.shape}")
    cols = im2col(x.data, k, k, 1, padding)
    return _result(cols, (x,), lambda g: (col2im(g, x.shape, k, k, 1, padding),), "unfold")


def bilinear_sample(source, coords) -> NdArray:
    """Sample source [C,H,W] at continuous (y, x) positions coords [2,H',W'].

    Each output is the bilinear blend of the four surrounding pixels; pixels
    outside the grid contribute zero.
    """
    source, coords = as_array(source), as_array(coords)
    if source.ndim != 3 or coords.ndim != 3 or coords.shape[0] != 2:
        raise ShapeError(f"bilinear_sample expects source [C,H,W] and coords [2,H',W'], "
                         f"got {source.shape} and {coords.shape}")
    c, h, w = source.shape
    oh, ow = coords.shape[1:]
    y = coords.data[0].ravel()
    x = coords.data[1].ravel()
    y0 = np.floor(y)
    x0 = np.floor(x)
    wy = y - y0
    wx = x - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    flat = source.data.reshape(c, h * w)

    corners = []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yy = y0 + dy
        xx = x0 + dx
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        idx = np.where(valid, yy * w + xx, 0)
        vals = flat[:, idx] * valid
        corners.append((idx, valid, vals))
    (i00, m00, v00), (i01, m01, v01), (i10, m10, v10), (i11, m11, v11) = corners
    w00 = (1 - wy) * (1 - wx)
    w01 = (1 - wy) * wx
    w10 = wy * (1 - wx)
    w11 = wy * wx
    out = v00 * w00 + v01 * w01 + v10 * w10 + v11 * w11

    def backward(g):
        g = g.reshape(c, -1)
        offs = (np.arange(c) * (h * w))[:, None]
        idx = np.concatenate([i00 + offs, i01 + offs, i10 + offs, i11 + offs], axis=1)
        wts = np.concatenate([g * (w00 * m00), g * (w01 * m01), g * (w10 * m10), g * (w11 * m11)],
                             axis=1)
        gsrc = np.bincount(idx.ravel(), weights=wts.ravel(), minlength=c * h * w)
        gy = (g * ((1 - wx) * (v10 - v00) + wx * (v11 - v01))).sum(axis=0)
        gx = (g * ((1 - wy) * (v01 - v00) + wy * (v11 - v10))).sum(axis=0)
        return gsrc.reshape(c, h, w), np.stack([gy.reshape(oh, ow), gx.reshape(oh, ow)])

    return _result(out.reshape(c, oh, ow), (source, coords), backward, "bilinear_sample")

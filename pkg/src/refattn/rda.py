"""Reference-based deformable attention.

For a query position p_i with matched Ref positions p_i^k, the transferred
feature is

    A(p_i) = sum_k s_i^k sum_j w_j V(p_i^k + p_j + dp_j) m_j

where p_j runs over the 3x3 taps, dp_j / m_j are offsets and masks predicted
from the LR feature and the pre-aligned Ref value, and s_i^k is a softmax of
the match similarities over the K matches.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .errors import ShapeError
from .matcher import CorrespondenceMap, match
from .numerics import (NdArray, ParamRng, as_array, bilinear_sample, concat, conv2d, leaky_relu,
                       matmul, mul, reshape, sigmoid, tanh, take)

TAPS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
N_TAPS = len(TAPS)
DEFAULT_MAX_OFFSET = 10.0


@dataclass
class DeformFields:
    """Offsets [2T,H,W] as (dy, dx) pairs per tap, masks [T,H,W], cooperative weights [K,H,W]
    and the transfer kernel [C_out,C_in,3,3]."""

    offsets: NdArray
    masks: NdArray
    coop_weights: np.ndarray
    kernel: NdArray


def cooperative_weights(cmap: CorrespondenceMap) -> np.ndarray:
    """Softmax over the K stored similarities at every query position, as [K,H,W]."""
    s = cmap.similarities
    e = np.exp(s - s.max(axis=1, keepdims=True))
    w = e / e.sum(axis=1, keepdims=True)
    return w.T.reshape((cmap.k,) + tuple(cmap.query_shape))


def warp_value(value, cmap: CorrespondenceMap) -> NdArray:
    """Gather ``value`` at every query's top-1 matched position (integer warp)."""
    value = as_array(value)
    c, h2, w2 = value.shape
    if (h2, w2) != tuple(cmap.key_shape):
        raise ShapeError(f"value grid {value.shape[1:]} does not match key grid {cmap.key_shape}")
    flat = reshape(value, (c, h2 * w2))
    return reshape(take(flat, cmap.top1(), axis=1), (c,) + tuple(cmap.query_shape))


class RdaHeads:
    """Learnable tensors of one attention block: offset head, mask head, transfer kernel."""

    names = ("off1.w", "off1.b", "off2.w", "off2.b", "msk1.w", "msk1.b", "msk2.w", "msk2.b",
             "kernel")

    def __init__(self, params: Dict[str, NdArray]):
        self.params = params

    @classmethod
    def init(cls, feat_ch: int, value_ch: int, rng: ParamRng, hidden: Optional[int] = None) -> "RdaHeads":
        """He init for hidden layers and kernel; zero output layers (offsets 0, masks 0.5)."""
        hidden = hidden or feat_ch
        c_in = feat_ch + value_ch
        p = {
            "off1.w": rng.conv(hidden, c_in), "off1.b": np.zeros(hidden),
            "off2.w": np.zeros((2 * N_TAPS, hidden, 3, 3)), "off2.b": np.zeros(2 * N_TAPS),
            "msk1.w": rng.conv(hidden, c_in), "msk1.b": np.zeros(hidden),
            "msk2.w": np.zeros((N_TAPS, hidden, 3, 3)), "msk2.b": np.zeros(N_TAPS),
            "kernel": rng.conv(value_ch, value_ch),
        }
        return cls({k: NdArray(v, requires_grad=True) for k, v in p.items()})

    @classmethod
    def identity(cls, feat_ch: int, value_ch: int, mask_logit: float = 0.0,
                 hidden: Optional[int] = None) -> "RdaHeads":
        """Zero heads with a centre-tap identity kernel (plain feature warping when masks are 1)."""
        hidden = hidden or feat_ch
        c_in = feat_ch + value_ch
        kernel = np.zeros((value_ch, value_ch, 3, 3))
        kernel[:, :, 1, 1] = np.eye(value_ch)
        p = {
            "off1.w": np.zeros((hidden, c_in, 3, 3)), "off1.b": np.zeros(hidden),
            "off2.w": np.zeros((2 * N_TAPS, hidden, 3, 3)), "off2.b": np.zeros(2 * N_TAPS),
            "msk1.w": np.zeros((hidden, c_in, 3, 3)), "msk1.b": np.zeros(hidden),
            "msk2.w": np.zeros((N_TAPS, hidden, 3, 3)), "msk2.b": np.full(N_TAPS, float(mask_logit)),
            "kernel": kernel,
        }
        return cls({k: NdArray(v, requires_grad=True) for k, v in p.items()})


def predict_fields(feat, value, cmap: CorrespondenceMap, heads: RdaHeads,
                   r: float = DEFAULT_MAX_OFFSET) -> DeformFields:
    """Offsets r*tanh(conv(...)) and masks sigmoid(conv(...)) from [F; warp(V)]."""
    feat = as_array(feat)
    warped = warp_value(value, cmap)
    if feat.shape[1:] != warped.shape[1:]:
        raise ShapeError(f"LR feature {feat.shape} and warped value {warped.shape} are not aligned")
    x = concat([feat, warped], axis=0)
    p = heads.params
    hid = leaky_relu(conv2d(x, p["off1.w"], p["off1.b"], 1, 1), 0.1)
    offsets = mul(tanh(conv2d(hid, p["off2.w"], p["off2.b"], 1, 1)), float(r))
    hid = leaky_relu(conv2d(x, p["msk1.w"], p["msk1.b"], 1, 1), 0.1)
    masks = sigmoid(conv2d(hid, p["msk2.w"], p["msk2.b"], 1, 1))
    return DeformFields(offsets, masks, cooperative_weights(cmap), p["kernel"])


def _tap_grid(h: int, w: int):
    dy = np.array([t[0] for t in TAPS], dtype=np.float64)[:, None, None]
    dx = np.array([t[1] for t in TAPS], dtype=np.float64)[:, None, None]
    return np.broadcast_to(dy, (N_TAPS, h, w)), np.broadcast_to(dx, (N_TAPS, h, w))


def deform_transfer(value, cmap: CorrespondenceMap, fields: DeformFields) -> NdArray:
    """Modulated deformable sampling of ``value`` around every matched position."""
    value = as_array(value)
    c = value.shape[0]
    h, w = cmap.query_shape
    kernel = as_array(fields.kernel)
    c_out = kernel.shape[0]
    if kernel.shape[1:] != (c, 3, 3):
        raise ShapeError(f"transfer kernel {kernel.shape} does not fit value channels {c}")
    off = as_array(fields.offsets)
    off_y = off[0::2]                                                  # [T,H,W]
    off_x = off[1::2]
    tap_y, tap_x = _tap_grid(h, w)
    ky, kx = cmap.key_coords()
    w2 = reshape(kernel, (c_out, c * N_TAPS))
    masks = reshape(as_array(fields.masks), (1, N_TAPS, h, w))
    out = None
    for n in range(cmap.k):
        base_y = ky[:, n].reshape(1, h, w).astype(np.float64)
        base_x = kx[:, n].reshape(1, h, w).astype(np.float64)
        cy = off_y + (base_y + tap_y)
        cx = off_x + (base_x + tap_x)
        coords = reshape(concat([cy, cx], axis=0), (2, N_TAPS * h, w))
        sampled = reshape(bilinear_sample(value, coords), (c, N_TAPS, h, w))
        cols = reshape(mul(sampled, masks), (c * N_TAPS, h * w))
        term = mul(reshape(matmul(w2, cols), (c_out, h, w)), fields.coop_weights[n][None])
        out = term if out is None else out + term
    return out


def ref_attention(q_feat, k_feat, value, feat, heads: RdaHeads, k: int = 1,
                  r: float = DEFAULT_MAX_OFFSET, patch: int = 3,
                  cmap: Optional[CorrespondenceMap] = None, return_fields: bool = False):
    """match -> predict_fields -> deform_transfer.  ``cmap`` skips the matching step."""
    if cmap is None:
        cmap = match(q_feat, k_feat, k, patch)
    fields = predict_fields(feat, value, cmap, heads, r)
    out = deform_transfer(value, cmap, fields)
    if return_fields:
        return out, fields, cmap
    return out

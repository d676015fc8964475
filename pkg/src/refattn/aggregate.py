"""Residual feature aggregation, windowed self-attention blocks, and the U-Net generator."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .encoder import FeaturePyramid, ImagePlane
from .errors import ConfigError, ShapeError
from .numerics import (NdArray, ParamRng, add, as_array, concat, conv2d, gelu, layer_norm,
                       leaky_relu, matmul, mul, pad2d, reshape, roll, softmax, transpose,
                       upsample_nearest)
from .rda import DEFAULT_MAX_OFFSET, DeformFields, RdaHeads, deform_transfer, predict_fields

MASK_NEG = -100.0


# -- windowed self-attention ------------------------------------------------

@dataclass
class StlBlock:
    """One windowed multi-head self-attention block (attention + MLP, pre-norm, residual)."""

    dim: int
    window: int
    heads: int
    shifted: bool
    params: Dict[str, NdArray]
    rel_pos_bias: bool = False

    def __post_init__(self):
        if self.heads < 1 or self.dim % self.heads:
            raise ConfigError(f"head count {self.heads} must divide channel width {self.dim}")
        if self.window < 1:
            raise ConfigError(f"window size must be positive, got {self.window}")

    @classmethod
    def init(cls, dim: int, window: int, heads: int, shifted: bool, rng: ParamRng,
             mlp_ratio: int = 2, rel_pos_bias: bool = False) -> "StlBlock":
        if heads < 1 or dim % heads:
            raise ConfigError(f"head count {heads} must divide channel width {dim}")
        b = 0.02 * math.sqrt(3.0)
        hidden = mlp_ratio * dim
        p = {
            "norm1.g": np.ones(dim), "norm1.b": np.zeros(dim),
            "qkv.w": rng.uniform((dim, 3 * dim), -b, b), "qkv.b": np.zeros(3 * dim),
            "proj.w": rng.uniform((dim, dim), -b, b), "proj.b": np.zeros(dim),
            "norm2.g": np.ones(dim), "norm2.b": np.zeros(dim),
            "fc1.w": rng.uniform((dim, hidden), -b, b), "fc1.b": np.zeros(hidden),
            "fc2.w": rng.uniform((hidden, dim), -b, b), "fc2.b": np.zeros(dim),
        }
        if rel_pos_bias:
            p["rpb"] = rng.uniform(((2 * window - 1) ** 2, heads), -b, b)
        return cls(dim, window, heads, shifted,
                   {k: NdArray(v, requires_grad=True) for k, v in p.items()}, rel_pos_bias)


def _region_mask(hp: int, wp: int, ws: int, shift: int) -> np.ndarray:
    """Additive [nW, T, T] mask separating regions that a cyclic shift made adjacent."""
    labels = np.zeros((hp, wp))
    n = 0
    for hs in (slice(0, -ws), slice(-ws, -shift), slice(-shift, None)):
        for wsl in (slice(0, -ws), slice(-ws, -shift), slice(-shift, None)):
            labels[hs, wsl] = n
            n += 1
    win = labels.reshape(hp // ws, ws, wp // ws, ws).transpose(0, 2, 1, 3).reshape(-1, ws * ws)
    return np.where(win[:, :, None] != win[:, None, :], MASK_NEG, 0.0)


def _rel_index(ws: int) -> np.ndarray:
    coords = np.stack(np.meshgrid(np.arange(ws), np.arange(ws), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (ws - 1)
    return rel[0] * (2 * ws - 1) + rel[1]


def _linear(x, w, b):
    return add(matmul(x, w), b)


def stl(x, block: StlBlock) -> NdArray:
    """Apply one block to x [C,H,W]; the input is zero-padded to whole windows and cropped back."""
    x = as_array(x)
    c, h, w = x.shape
    if c != block.dim:
        raise ShapeError(f"block width {block.dim} does not match input {x.shape}")
    ws, nh = block.window, block.heads
    d = c // nh
    p = block.params
    hp, wp = -(-h // ws) * ws, -(-w // ws) * ws
    if (hp, wp) != (h, w):
        x = pad2d(x, 0, hp - h, 0, wp - w)
    shift = ws // 2 if block.shifted and min(hp, wp) > ws else 0
    tokens = transpose(x, (1, 2, 0))                                   # [Hp,Wp,C]

    t = layer_norm(tokens, p["norm1.g"], p["norm1.b"], axis=-1)
    if shift:
        t = roll(t, (-shift, -shift), axis=(0, 1))
    nwh, nww = hp // ws, wp // ws
    t = reshape(transpose(reshape(t, (nwh, ws, nww, ws, c)), (0, 2, 1, 3, 4)), (nwh * nww, ws * ws, c))
    qkv = _linear(t, p["qkv.w"], p["qkv.b"])                          # [nW,T,3C]
    qkv = transpose(reshape(qkv, (nwh * nww, ws * ws, 3, nh, d)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]                                   # [nW,h,T,d]
    attn = matmul(mul(q, 1.0 / math.sqrt(d)), transpose(k, (0, 1, 3, 2)))
    if block.rel_pos_bias:
        bias = reshape(p["rpb"][_rel_index(ws).ravel()], (ws * ws, ws * ws, nh))
        attn = add(attn, transpose(bias, (2, 0, 1)))
    if shift:
        attn = add(attn, _region_mask(hp, wp, ws, shift)[:, None])
    out = matmul(softmax(attn, axis=-1), v)                            # [nW,h,T,d]
    out = reshape(transpose(out, (0, 2, 1, 3)), (nwh * nww, ws * ws, c))
    out = _linear(out, p["proj.w"], p["proj.b"])
    out = reshape(transpose(reshape(out, (nwh, nww, ws, ws, c)), (0, 2, 1, 3, 4)), (hp, wp, c))
    if shift:
        out = roll(out, (shift, shift), axis=(0, 1))
    x1 = add(tokens, out)

    y = layer_norm(x1, p["norm2.g"], p["norm2.b"], axis=-1)
    y = _linear(gelu(_linear(y, p["fc1.w"], p["fc1.b"])), p["fc2.w"], p["fc2.b"])
    x2 = add(x1, y)
    res = transpose(x2, (2, 0, 1))
    if (hp, wp) != (h, w):
        res = res[:, :h, :w]
    return res


# -- fusion and aggregation -------------------------------------------------

def fuse(feat, attn, weight, bias=None) -> NdArray:
    """3x3 conv over the channel concatenation [F; A]."""
    feat, attn = as_array(feat), as_array(attn)
    if feat.shape[1:] != attn.shape[1:]:
        raise ShapeError(f"cannot fuse LR feature {feat.shape} with attention feature {attn.shape}")
    return conv2d(concat([feat, attn], axis=0), weight, bias, 1, 1)


@dataclass
class RfaParams:
    fuse_w: NdArray
    fuse_b: NdArray
    blocks: List[StlBlock]
    out_w: NdArray
    out_b: NdArray

    @classmethod
    def init(cls, feat_ch: int, attn_ch: int, n_blocks: int, window: int, heads: int,
             rng: ParamRng, rel_pos_bias: bool = False) -> "RfaParams":
        """Magnitude-preserving start: the fusion conv reads only the attention half
        (He init, zero on the feature half) and the trailing conv is a centre-tap
        identity, so rfa(F, A) begins as F + conv(A) + small STL terms."""
        fw = np.zeros((feat_ch, feat_ch + attn_ch, 3, 3))
        fw[:, feat_ch:] = rng.conv(feat_ch, attn_ch)
        fuse_w = NdArray(fw, requires_grad=True)
        fuse_b = NdArray(np.zeros(feat_ch), requires_grad=True)
        blocks = [StlBlock.init(feat_ch, window, heads, bool(i % 2), rng, rel_pos_bias=rel_pos_bias)
                  for i in range(n_blocks)]
        ow = np.zeros((feat_ch, feat_ch, 3, 3))
        ow[:, :, 1, 1] = np.eye(feat_ch)
        out_w = NdArray(ow, requires_grad=True)
        out_b = NdArray(np.zeros(feat_ch), requires_grad=True)
        return cls(fuse_w, fuse_b, blocks, out_w, out_b)

    def named(self) -> Dict[str, NdArray]:
        out = {"fuse.w": self.fuse_w, "fuse.b": self.fuse_b, "out.w": self.out_w, "out.b": self.out_b}
        for i, blk in enumerate(self.blocks):
            out.update({f"stl{i}.{k}": v for k, v in blk.params.items()})
        return out


def rfa(feat, attn, params: RfaParams) -> NdArray:
    """F' = fuse(F, A); F' = STL(F') + F; return conv(F')."""
    feat = as_array(feat)
    x = fuse(feat, attn, params.fuse_w, params.fuse_b)
    for blk in params.blocks:
        x = stl(x, blk)
    x = add(x, feat)
    return conv2d(x, params.out_w, params.out_b, 1, 1)


def synthesize(f_out, lr_up) -> NdArray:
    """X_SR = F_L + X_LR_up (unclamped; clamp only when exporting)."""
    f_out = as_array(f_out)
    base = lr_up.pixels if isinstance(lr_up, ImagePlane) else lr_up
    base = as_array(base)
    if f_out.shape != base.shape:
        raise ShapeError(f"residual {f_out.shape} does not match upsampled image {base.shape}")
    return add(f_out, base)


def export_image(sr) -> ImagePlane:
    """Clamp to [0,1] for storage."""
    data = np.asarray(getattr(sr, "data", sr), dtype=np.float64)
    return ImagePlane(np.clip(data, 0.0, 1.0))


# -- U-Net generator --------------------------------------------------------

@dataclass
class GeneratorConfig:
    widths: tuple = (64, 128, 256)
    window: int = 4
    heads: int = 2
    blocks: int = 2
    k: int = 1
    r: float = DEFAULT_MAX_OFFSET
    rel_pos_bias: bool = False


@dataclass
class StageRecord:
    """Intermediate tensors of one attention stage, kept for export."""

    scale: int
    path: str
    attention: NdArray
    fields: DeformFields


class Generator:
    """Three-scale U-Net with attention + aggregation at every scale on both paths.

    Downscaling: F_1 = conv_in(X); at scale l, A_l = RDA(F_l), G_l = RFA(F_l, A_l);
    F_{l+1} = strided conv(G_l).  Upscaling from scale 3: the bottom input is G_3;
    at each scale RDA and RFA run again, then nearest x2 + conv and a skip from
    G_{l-1}.  F_L = conv_out(last); conv_out starts at zero so the untrained
    network returns the bicubic image.
    """

    def __init__(self, config: GeneratorConfig, params: Dict[str, NdArray]):
        self.config = config
        self.params = params
        self._build_views()

    # parameter bookkeeping
    @classmethod
    def init(cls, config: GeneratorConfig, seed: int) -> "Generator":
        rng = ParamRng(seed)
        c1, c2, c3 = config.widths
        p: Dict[str, NdArray] = {}

        def conv(name, co, ci, zero=False):
            p[f"{name}.w"] = NdArray(np.zeros((co, ci, 3, 3)) if zero else rng.conv(co, ci),
                                     requires_grad=True)
            p[f"{name}.b"] = NdArray(np.zeros(co), requires_grad=True)

        conv("conv_in", c1, 3)
        for path in ("down", "up"):
            for l, c in enumerate(config.widths, start=1):
                heads = RdaHeads.init(c, c, rng)
                p.update({f"{path}{l}.rda.{k}": v for k, v in heads.params.items()})
                agg = RfaParams.init(c, c, config.blocks, config.window, config.heads, rng,
                                     config.rel_pos_bias)
                p.update({f"{path}{l}.rfa.{k}": v for k, v in agg.named().items()})
        conv("trans_down1", c2, c1)
        conv("trans_down2", c3, c2)
        conv("trans_up3", c2, c3)
        conv("trans_up2", c1, c2)
        conv("conv_out", 3, c1, zero=True)
        return cls(config, p)

    def _build_views(self) -> None:
        cfg = self.config
        self.heads = {}
        self.rfas = {}
        for path in ("down", "up"):
            for l in (1, 2, 3):
                pre = f"{path}{l}.rda."
                self.heads[(path, l)] = RdaHeads({k[len(pre):]: v for k, v in self.params.items()
                                                  if k.startswith(pre)})
                pre = f"{path}{l}.rfa."
                blocks = []
                for i in range(cfg.blocks):
                    bp = f"{pre}stl{i}."
                    blocks.append(StlBlock(cfg.widths[l - 1], cfg.window, cfg.heads, bool(i % 2),
                                           {k[len(bp):]: v for k, v in self.params.items()
                                            if k.startswith(bp)}, cfg.rel_pos_bias))
                self.rfas[(path, l)] = RfaParams(self.params[pre + "fuse.w"], self.params[pre + "fuse.b"],
                                                 blocks, self.params[pre + "out.w"],
                                                 self.params[pre + "out.b"])

    def zero_(self) -> "Generator":
        for v in self.params.values():
            v.data[...] = 0.0
        return self

    def _conv(self, name, x, stride=1):
        return conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"], stride, 1)

    def _attend(self, pyr: FeaturePyramid, l: int, path: str, feat, force_mask, records):
        cmap = pyr.maps[l - 1]
        value = pyr.v[l - 1]
        fields = predict_fields(feat, value, cmap, self.heads[(path, l)], self.config.r)
        if force_mask is not None:
            fields.masks = NdArray(np.full(fields.masks.shape, float(force_mask)))
        attn = deform_transfer(value, cmap, fields)
        if records is not None:
            records.append(StageRecord(l, path, attn, fields))
        return attn

    def forward(self, lr_up, pyramid: FeaturePyramid, force_mask: Optional[float] = None,
                records: Optional[list] = None) -> NdArray:
        """Residual image F_L [3,H,W]; fills pyramid.f / a / f_up / a_up."""
        if len(pyramid.maps) != 3:
            raise ShapeError("pyramid has no correspondence maps; attach pyramid_maps output first")
        x = as_array(lr_up.pixels if isinstance(lr_up, ImagePlane) else lr_up)
        pyramid.f, pyramid.a, pyramid.f_up, pyramid.a_up = [], [], [], []
        feat = leaky_relu(self._conv("conv_in", x), 0.1)
        skips = []
        for l in (1, 2, 3):
            pyramid.f.append(feat)
            attn = self._attend(pyramid, l, "down", feat, force_mask, records)
            pyramid.a.append(attn)
            agg = rfa(feat, attn, self.rfas[("down", l)])
            skips.append(agg)
            if l < 3:
                feat = leaky_relu(self._conv(f"trans_down{l}", agg, stride=2), 0.1)
        feat = skips[-1]
        for l in (3, 2, 1):
            if l < 3:
                feat = leaky_relu(self._conv(f"trans_up{l + 1}", upsample_nearest(feat, 2)), 0.1)
                feat = add(feat, skips[l - 1])
            pyramid.f_up.append(feat)
            attn = self._attend(pyramid, l, "up", feat, force_mask, records)
            pyramid.a_up.append(attn)
            feat = rfa(feat, attn, self.rfas[("up", l)])
        pyramid.f_up.reverse()
        pyramid.a_up.reverse()
        return self._conv("conv_out", feat)


def unet_forward(pyramid: FeaturePyramid, generator: Generator, lr_up, **kwargs) -> NdArray:
    return generator.forward(lr_up, pyramid, **kwargs)

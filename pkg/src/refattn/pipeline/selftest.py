"""Finite-difference gradient suites and the built-in oracle/invariant self-test."""
from __future__ import annotations

import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Tuple

import numpy as np

from ..aggregate import GeneratorConfig, Generator, RfaParams, StlBlock, fuse, rfa, stl
from ..encoder import ImagePlane, bicubic_upsample, build_pyramid, encode, resize, seeded_init
from ..losses import Critic, gradient_penalty, perceptual_loss, rec_loss
from ..matcher import brute_force_match, match, pyramid_maps
from ..numerics import (NdArray, ParamRng, abs_, add, bilinear_sample, concat, conv2d,
                        conv_transpose2d, div, exp, gelu, getitem, gradcheck, l2_normalize,
                        layer_norm, leaky_relu, log, matmul, mean, mul, ndar, norm, pad2d, power,
                        relu, reshape, roll, sigmoid, softmax, sqrt, square, sub, sum_, take, tanh,
                        transpose, unfold, upsample_nearest)
from ..rda import (DeformFields, RdaHeads, cooperative_weights, deform_transfer, predict_fields,
                   ref_attention, warp_value)

GRAD_TOL = 1e-5
MODULES = ("numerics", "encoder", "rda", "aggregate", "losses")


@dataclass
class CheckOutcome:
    name: str
    passed: bool
    detail: str = ""


def _probe(out: NdArray, seed: int) -> Callable[[NdArray], NdArray]:
    """Scalar read-out <W, out> with fixed random W, so every output entry matters."""
    w = np.random.default_rng(seed).uniform(-1.0, 1.0, size=out.shape)
    return sum_(mul(out, w))


def _scalar(fn: Callable[..., NdArray], seed: int) -> Callable[..., NdArray]:
    def wrapped(*args):
        return _probe(fn(*args), seed)
    return wrapped


def _u(rng, *shape, lo=-1.0, hi=1.0):
    return rng.uniform(lo, hi, size=shape)


def _away_from_zero(rng, *shape, margin=0.1):
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


# -- gradient cases per module -----------------------------------------------

def _numerics_cases(rng) -> List[Tuple[str, Callable, list]]:
    a, b = _u(rng, 3, 4), _u(rng, 3, 4)
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    img = _u(rng, 2, 6, 5)
    wgt = _u(rng, 3, 2, 3, 3)
    src = _u(rng, 2, 5, 6)
    # sampling points strictly inside cells, some outside the grid
    coords = np.stack([rng.uniform(-1.5, 5.5, size=(4, 3)), rng.uniform(-1.5, 6.5, size=(4, 3))])
    coords = np.floor(coords) + rng.uniform(0.1, 0.9, size=coords.shape)
    return [
        ("add", lambda x, y: add(x, y), [a, b]),
        ("sub_broadcast", lambda x, y: sub(x, y), [a, _u(rng, 4)]),
        ("mul", lambda x, y: mul(x, y), [a, b]),
        ("div", lambda x, y: div(x, y), [a, pos]),
        ("power", lambda x: power(x, 1.7), [pos]),
        ("square", lambda x: square(x), [a]),
        ("exp", lambda x: exp(x), [a]),
        ("log", lambda x: log(x), [pos]),
        ("sqrt", lambda x: sqrt(x), [pos]),
        ("abs", lambda x: abs_(x), [_away_from_zero(rng, 3, 4)]),
        ("tanh", lambda x: tanh(x), [a]),
        ("sigmoid", lambda x: sigmoid(x), [a]),
        ("relu", lambda x: relu(x), [_away_from_zero(rng, 3, 4)]),
        ("leaky_relu", lambda x: leaky_relu(x, 0.1), [_away_from_zero(rng, 3, 4)]),
        ("gelu", lambda x: gelu(x), [a]),
        ("matmul", lambda x, y: matmul(x, y), [a, _u(rng, 4, 2)]),
        ("matmul_batched", lambda x, y: matmul(x, y), [_u(rng, 2, 3, 4), _u(rng, 2, 4, 2)]),
        ("sum_axis", lambda x: sum_(x, axis=1), [a]),
        ("mean", lambda x: mean(x, axis=0, keepdims=True), [a]),
        ("norm", lambda x: norm(x), [a]),
        ("softmax", lambda x: softmax(x, axis=-1), [a]),
        ("l2_normalize", lambda x: l2_normalize(x, axis=0), [a]),
        ("layer_norm", lambda x, g, bb: layer_norm(x, g, bb, axis=-1), [a, _u(rng, 4), _u(rng, 4)]),
        ("reshape_transpose", lambda x: transpose(reshape(x, (2, 6)), (1, 0)), [a]),
        ("getitem", lambda x: getitem(x, (slice(0, 2), [0, 2, 2])), [a]),
        ("take", lambda x: take(x, np.array([3, 0, 0, 1]), axis=1), [a]),
        ("concat", lambda x, y: concat([x, y], axis=0), [a, b]),
        ("pad2d", lambda x: pad2d(x, 1, 0, 2, 1), [img]),
        ("roll", lambda x: roll(x, (1, -2), axis=(1, 2)), [img]),
        ("upsample_nearest", lambda x: upsample_nearest(x, 2), [img]),
        ("conv2d", lambda x, w, bb: conv2d(x, w, bb, 1, 1), [img, wgt, _u(rng, 3)]),
        ("conv2d_stride2", lambda x, w: conv2d(x, w, None, 2, 1), [img, wgt]),
        ("conv_transpose2d", lambda g, w: conv_transpose2d(g, w, 2, 1, (6, 5)),
         [_u(rng, 3, 3, 3), wgt]),
        ("unfold", lambda x: unfold(x, 3, 1), [img]),
        ("bilinear_sample", lambda s, c: bilinear_sample(s, c), [src, coords]),
    ]


def _encoder_cases(rng):
    stack = seeded_init(3, (2, 3, 4))
    x = rng.uniform(0.0, 1.0, size=(3, 8, 8))

    def fn(img):
        feats = encode(img, stack, "value")
        return add(sum_(mul(feats[0], 0.3)), sum_(feats[2]))
    return [("encode_value", fn, [x])]


def _rda_setup(rng, c=3, h=5, w=4, k=2):
    feat = _u(rng, c, h, w)
    value = _u(rng, c, h + 1, w + 1)
    q = rng.uniform(size=(c, h, w))
    kf = rng.uniform(size=(c, h + 1, w + 1))
    cmap = match(q, kf, k, 3)
    heads = RdaHeads.init(c, c, ParamRng(int(rng.integers(1 << 30))))
    # small non-zero output heads so offsets and masks depend on the inputs
    for name in ("off2.w", "msk2.w"):
        heads.params[name].data[...] = _u(rng, *heads.params[name].shape) * 0.05
    heads.params["msk2.b"].data[...] = _u(rng, *heads.params["msk2.b"].shape)
    return feat, value, cmap, heads


def _rda_cases(rng):
    feat, value, cmap, heads = _rda_setup(rng)
    h, w = cmap.query_shape
    off = rng.uniform(-1.4, 1.4, size=(18, h, w))
    off = np.floor(off) + rng.uniform(0.15, 0.85, size=off.shape)  # stay inside bilinear cells
    masks = rng.uniform(0.1, 0.9, size=(9, h, w))
    kern = _u(rng, 3, 3, 3, 3)
    coop = cooperative_weights(cmap)

    def transfer(v, o, m, kk):
        return deform_transfer(v, cmap, DeformFields(o, m, coop, kk))

    def composed_v(v):
        return ref_attention(None, None, v, feat, heads, cmap=cmap, r=2.0)

    def composed_f(f):
        return ref_attention(None, None, value, f, heads, cmap=cmap, r=2.0)

    def head_weights(w_off, w_msk):
        p = dict(heads.params)
        p["off2.w"], p["msk2.w"] = w_off, w_msk
        fields = predict_fields(feat, value, cmap, RdaHeads(p), 2.0)
        return fields.offsets, fields.masks

    return [
        ("deform_transfer", transfer, [value, off, masks, kern]),
        ("ref_attention_wrt_value", composed_v, [value]),
        ("ref_attention_wrt_feature", composed_f, [feat]),
        ("predict_fields_offsets", lambda a, b: head_weights(a, b)[0],
         [heads.params["off2.w"].data, heads.params["msk2.w"].data]),
        ("predict_fields_masks", lambda a, b: head_weights(a, b)[1],
         [heads.params["off2.w"].data, heads.params["msk2.w"].data]),
    ]


def _aggregate_cases(rng):
    dim, ws = 4, 2
    prng = ParamRng(int(rng.integers(1 << 30)))
    x = _u(rng, dim, 4, 6)
    plain = StlBlock.init(dim, ws, 2, False, prng, rel_pos_bias=True)
    shifted = StlBlock.init(dim, ws, 2, True, prng)
    odd = _u(rng, dim, 3, 5)
    agg = RfaParams.init(dim, dim, 2, ws, 2, prng)
    feat, attn = _u(rng, dim, 4, 4), _u(rng, dim, 4, 4)

    def rfa_wrt_fuse(wf, wq):
        first = agg.blocks[0]
        blocks = [StlBlock(first.dim, first.window, first.heads, first.shifted,
                           {**first.params, "qkv.w": wq})] + agg.blocks[1:]
        p = RfaParams(wf, agg.fuse_b, blocks, agg.out_w, agg.out_b)
        return rfa(feat, attn, p)

    return [
        ("stl_window", lambda t: stl(t, plain), [x]),
        ("stl_shifted", lambda t: stl(t, shifted), [x]),
        ("stl_padded", lambda t: stl(t, shifted), [odd]),
        ("fuse", lambda f, a, w: fuse(f, a, w), [feat, attn, agg.fuse_w.data]),
        ("rfa_wrt_inputs", lambda f, a: rfa(f, a, agg), [feat, attn]),
        ("rfa_wrt_weights", rfa_wrt_fuse, [agg.fuse_w.data, agg.blocks[0].params["qkv.w"].data]),
    ]


def _losses_cases(rng):
    sr, hr = rng.uniform(size=(3, 8, 8)), rng.uniform(size=(3, 8, 8))
    stack = seeded_init(5, (2, 3, 4))
    critic = Critic.init(int(rng.integers(1 << 30)), width=2)
    interp = rng.uniform(size=(3, 8, 8))

    def feat_fn(x):
        return encode(x, stack, "value")[2]

    def gp_wrt_weights(w1, w2, fc):
        c = Critic({**critic.params, "c1.w": w1, "c2.w": w2, "fc.w": fc})
        return gradient_penalty(c, interp)

    return [
        ("rec_loss", lambda s: rec_loss(s, hr), [sr]),
        ("perceptual_loss", lambda s: perceptual_loss(s, hr, feat_fn), [sr]),
        ("critic_score", lambda x: critic(x), [sr]),
        ("gradient_penalty", gp_wrt_weights,
         [critic.params["c1.w"].data, critic.params["c2.w"].data, critic.params["fc.w"].data]),
    ]


_SUITES = {
    "numerics": _numerics_cases,
    "encoder": _encoder_cases,
    "rda": _rda_cases,
    "aggregate": _aggregate_cases,
    "losses": _losses_cases,
}


def gradient_suite(module: str, seed: int = 0, tol: float = GRAD_TOL,
                   max_entries: int = 24) -> List[Tuple[str, float]]:
    """(case name, max relative error) for every gradient case of ``module``."""
    if module not in _SUITES:
        raise ValueError(f"unknown module {module!r}; choose from {', '.join(MODULES)}")
    rng = np.random.default_rng(seed)
    results = []
    for i, (name, fn, inputs) in enumerate(_SUITES[module](rng)):
        res = gradcheck(_scalar(fn, seed + 1000 + i), inputs, max_entries=max_entries, seed=seed)
        results.append((f"{module}.{name}", res.max_rel_error))
    return results


# -- oracle and invariant checks --------------------------------------------

def _conv_loop(x, w, b, stride, pad):
    c, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((co, ho, wo))
    for o in range(co):
        for i in range(ho):
            for j in range(wo):
                acc = b[o]
                for ci in range(c):
                    for di in range(kh):
                        for dj in range(kw):
                            acc += w[o, ci, di, dj] * xp[ci, i * stride + di, j * stride + dj]
                out[o, i, j] = acc
    return out


def _check_conv(rng):
    x, w, b = _u(rng, 2, 5, 6), _u(rng, 3, 2, 3, 3), _u(rng, 3)
    ok = all(np.allclose(conv2d(x, w, b, s, 1).data, _conv_loop(x, w, b, s, 1), rtol=0, atol=1e-12)
             for s in (1, 2))
    return ok, ""


def _check_match(rng):
    for _ in range(10):
        h1, w1, h2, w2 = rng.integers(2, 9, size=4)
        q, kf = _u(rng, 3, h1, w1), _u(rng, 3, h2, w2)
        k = int(rng.integers(1, 4))
        a, b = match(q, kf, k, 3), brute_force_match(q, kf, k, 3)
        if not (np.array_equal(a.positions, b.positions) and np.array_equal(a.similarities, b.similarities)):
            return False, "match differs from brute force"
    return True, ""


def _check_cosine_invariance(rng):
    q, kf = _u(rng, 3, 6, 6), _u(rng, 3, 7, 5)
    base = match(q, kf, 2, 1)
    scaled = match(q * 4.0, kf * 0.5, 2, 1)
    return (np.array_equal(base.positions, scaled.positions)
            and np.array_equal(base.similarities, scaled.similarities)), ""


def _check_rda_reduction(rng):
    c = 3
    q, kf, v, f = _u(rng, c, 5, 5), _u(rng, c, 6, 6), _u(rng, c, 6, 6), _u(rng, c, 5, 5)
    heads = RdaHeads.identity(c, c, mask_logit=50.0)
    out, fields, cmap = ref_attention(q, kf, v, f, heads, k=1, return_fields=True)
    ok = np.abs(fields.offsets.data).max() == 0 and np.all(fields.masks.data == 1.0)
    ok = ok and np.allclose(out.data, warp_value(v, cmap).data, rtol=0, atol=1e-12)
    return ok, ""


def _check_residual_identity(rng):
    cfg = GeneratorConfig(widths=(2, 4, 4), window=2, heads=1, blocks=1)
    gen = Generator.init(cfg, 0).zero_()
    lr = ImagePlane(rng.uniform(size=(3, 4, 4)))
    up = bicubic_upsample(lr, 4)
    stack = seeded_init(0, cfg.widths)
    pyr = build_pyramid(up.pixels, rng.uniform(size=(3, 16, 16)), stack)
    pyr.maps = pyramid_maps(pyr.q, pyr.k)
    sr = add(gen.forward(up, pyr), up.pixels)
    return bool(np.array_equal(sr.data, up.pixels)), ""


def _check_bounds(rng):
    for _ in range(5):
        feat, value, cmap, heads = _rda_setup(rng, k=3)
        heads.params["off2.w"].data[...] *= 400.0
        fields = predict_fields(feat, value, cmap, heads, 10.0)
        if not (np.allclose(fields.coop_weights.sum(axis=0), 1.0, rtol=0, atol=1e-12)
                and np.abs(fields.offsets.data).max() <= 10.0
                and fields.masks.data.min() >= 0.0 and fields.masks.data.max() <= 1.0):
            return False, ""
    return True, ""


def _check_bicubic(rng):
    img = rng.uniform(size=(3, 2, 2))
    up = resize(img, 8, 8)
    # direct kernel evaluation with replicate borders
    def cubic(t):
        t = abs(t)
        if t <= 1:
            return 1.5 * t ** 3 - 2.5 * t ** 2 + 1
        if t < 2:
            return -0.5 * t ** 3 + 2.5 * t ** 2 - 4 * t + 2
        return 0.0
    out = np.zeros((3, 8, 8))
    for i in range(8):
        for j in range(8):
            sy, sx = (i + 0.5) / 4 - 0.5, (j + 0.5) / 4 - 0.5
            acc = np.zeros(3)
            for m in range(int(np.floor(sy)) - 1, int(np.floor(sy)) + 3):
                for n in range(int(np.floor(sx)) - 1, int(np.floor(sx)) + 3):
                    acc += cubic(sy - m) * cubic(sx - n) * img[:, min(max(m, 0), 1), min(max(n, 0), 1)]
            out[:, i, j] = acc
    return bool(np.allclose(up, out, rtol=0, atol=1e-10)), ""


def _check_ndar(rng):
    arr = rng.uniform(-3, 3, size=(2, 3, 4)).astype(np.float32).astype(np.float64)
    return bool(np.array_equal(ndar.loads(ndar.dumps(arr)), arr)), ""


def _check_png(rng):
    from .imageio import read_png, write_png
    pix = rng.integers(0, 256, size=(3, 5, 7)) / 255.0
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "x.png"
        write_png(path, pix)
        back = read_png(path).pixels
    return bool(np.array_equal(np.rint(back * 255), np.rint(pix * 255))), ""


_ORACLES = [
    ("conv2d_vs_loop", _check_conv),
    ("match_vs_brute_force", _check_match),
    ("cosine_invariance", _check_cosine_invariance),
    ("rda_reduces_to_warping", _check_rda_reduction),
    ("zero_generator_returns_bicubic", _check_residual_identity),
    ("field_bounds", _check_bounds),
    ("bicubic_kernel_oracle", _check_bicubic),
    ("ndar_roundtrip", _check_ndar),
    ("png_roundtrip", _check_png),
]


def run_selftest(seed: int = 0, out=None) -> Tuple[int, int]:
    """Run every gradient suite and oracle check; print one line each, then the pass count."""
    out = out or sys.stdout
    outcomes: List[CheckOutcome] = []
    for module in MODULES:
        for name, err in gradient_suite(module, seed):
            outcomes.append(CheckOutcome(f"grad.{name}", err < GRAD_TOL, f"max_rel_error={err:.3e}"))
    rng = np.random.default_rng(seed)
    for name, check in _ORACLES:
        ok, detail = check(rng)
        outcomes.append(CheckOutcome(f"oracle.{name}", bool(ok), detail))
    for o in outcomes:
        line = f"{'PASS' if o.passed else 'FAIL'} {o.name}"
        print(line + (f" {o.detail}" if o.detail else ""), file=out)
    passed = sum(o.passed for o in outcomes)
    print(f"{passed}/{len(outcomes)} checks passed", file=out)
    return passed, len(outcomes)

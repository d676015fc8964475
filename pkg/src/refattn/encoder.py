"""Bicubic pre-upsampling and three-scale texture feature encoders.

The query and key encoders share one set of weight arrays; the value encoder
has its own.  Scale ``l`` (1-based) has spatial stride ``2**(l-1)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ShapeError
from .numerics import NdArray, ParamRng, conv2d, ndar, no_grad, relu

ROLES = ("query", "key", "value")
CUBIC_A = -0.5


@dataclass
class ImagePlane:
    """RGB image as float64 [3,H,W] with values in [0,1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[0] != 3:
            raise ShapeError(f"ImagePlane needs [3,H,W] pixels, got {px.shape}")
        if not np.isfinite(px).all() or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("ImagePlane pixels must be finite and within [0,1]")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


def cubic_weight(t, a: float = CUBIC_A):
    """Keys cubic convolution kernel (Catmull-Rom for a = -0.5)."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    near = ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    far = ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """[n_out, n_in] bicubic resampling matrix with half-pixel alignment.

    When shrinking, the kernel is stretched by the reduction factor
    (antialiasing).  Border taps replicate the edge pixel and each row is
    normalised to sum to one.
    """
    scale = n_out / n_in
    stretch = min(scale, 1.0)
    support = 2.0 / stretch
    mat = np.zeros((n_out, n_in))
    for o in range(n_out):
        center = (o + 0.5) / scale - 0.5
        lo = int(math.floor(center - support))
        hi = int(math.ceil(center + support))
        taps = np.arange(lo, hi + 1)
        wts = cubic_weight((center - taps) * stretch)
        wts = wts / wts.sum()
        np.add.at(mat[o], np.clip(taps, 0, n_in - 1), wts)
    return mat


def resize(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resize of a [C,H,W] array (no clamping)."""
    rows = resize_matrix(pixels.shape[1], out_h)
    cols = resize_matrix(pixels.shape[2], out_w)
    return np.einsum("oh,chw,pw->cop", rows, pixels, cols)


def bicubic_upsample(image: ImagePlane, factor: int) -> ImagePlane:
    if factor < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {factor}")
    if factor == 1:
        return ImagePlane(image.pixels.copy())
    out = resize(image.pixels, image.height * factor, image.width * factor)
    return ImagePlane(np.clip(out, 0.0, 1.0))


# -- encoder stack -----------------------------------------------------------

def _layer_names(prefix: str) -> List[str]:
    names = []
    for scale in (1, 2, 3):
        for conv in (1, 2):
            names += [f"{prefix}.s{scale}.conv{conv}.w", f"{prefix}.s{scale}.conv{conv}.b"]
    return names


@dataclass
class EncoderStack:
    """Per-scale conv weights for the shared query/key encoder and the value encoder."""

    widths: tuple
    params: Dict[str, np.ndarray]
    seed: Optional[int] = None
    trainable: bool = False
    _arrays: Dict[str, NdArray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != 3:
            raise ValueError(f"encoder needs three channel widths, got {self.widths}")
        self.refresh()

    def refresh(self) -> None:
        """Rebuild the array views after ``params`` was edited in place."""
        self._arrays = {k: NdArray(v, requires_grad=self.trainable) for k, v in self.params.items()}

    def weights(self, role: str) -> Dict[str, NdArray]:
        """Parameters used by ``role``; query and key get the very same objects."""
        if role not in ROLES:
            raise ValueError(f"unknown encoder role {role!r}")
        prefix = "v" if role == "value" else "qk"
        return {k[len(prefix) + 1:]: a for k, a in self._arrays.items() if k.startswith(prefix + ".")}

    @property
    def arrays(self) -> Dict[str, NdArray]:
        return self._arrays

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for name, value in self.params.items():
            fname = f"{name}.ndar"
            ndar.save(directory / fname, value)
            entries.append({"name": name, "shape": list(value.shape), "file": fname})
        manifest = {"kind": "encoder", "seed": self.seed, "widths": list(self.widths),
                    "params": entries}
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "EncoderStack":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        params = {}
        for entry in manifest["params"]:
            arr = ndar.load(directory / entry["file"])
            if list(arr.shape) != entry["shape"]:
                raise ShapeError(f"{entry['name']}: manifest shape {entry['shape']} "
                                 f"but dump has {list(arr.shape)}")
            params[entry["name"]] = arr
        return cls(tuple(manifest["widths"]), params, seed=manifest.get("seed"))


def seeded_init(seed: int, widths: Sequence[int] = (64, 128, 256)) -> EncoderStack:
    """He-uniform conv weights (variance 2/fan_in) and zero biases from a seeded PCG64 stream."""
    widths = tuple(int(w) for w in widths)
    if len(widths) != 3:
        raise ValueError(f"encoder needs three channel widths, got {widths}")
    rng = ParamRng(seed)
    params: Dict[str, np.ndarray] = {}
    for prefix in ("qk", "v"):
        c_in = 3
        for scale, width in enumerate(widths, start=1):
            params[f"{prefix}.s{scale}.conv1.w"] = rng.conv(width, c_in)
            params[f"{prefix}.s{scale}.conv1.b"] = np.zeros(width)
            params[f"{prefix}.s{scale}.conv2.w"] = rng.conv(width, width)
            params[f"{prefix}.s{scale}.conv2.b"] = np.zeros(width)
            c_in = width
    return EncoderStack(widths, params, seed=seed)


def encode(image, stack: EncoderStack, role: str) -> List[NdArray]:
    """Three-scale features of ``image`` ([3,H,W] array, ImagePlane or NdArray)."""
    if isinstance(image, ImagePlane):
        x = NdArray(image.pixels)
    elif isinstance(image, NdArray):
        x = image
    else:
        x = NdArray(image)
    if x.ndim != 3 or x.shape[1] % 4 or x.shape[2] % 4:
        raise ShapeError(f"encoder input must be [C,H,W] with H and W divisible by 4, got {x.shape}")
    w = stack.weights(role)
    feats = []
    for scale in (1, 2, 3):
        stride = 1 if scale == 1 else 2
        x = relu(conv2d(x, w[f"s{scale}.conv1.w"], w[f"s{scale}.conv1.b"], stride, 1))
        x = relu(conv2d(x, w[f"s{scale}.conv2.w"], w[f"s{scale}.conv2.b"], 1, 1))
        feats.append(x)
    return feats


@dataclass
class FeaturePyramid:
    """Per-scale features for one LR/Ref pair (index 0 is scale 1).

    ``q`` comes from the upsampled LR image, ``k`` and ``v`` from the Ref image.
    ``maps`` holds the per-scale correspondence maps; the remaining lists are
    filled by the U-Net forward pass.
    """

    q: List[NdArray]
    k: List[NdArray]
    v: List[NdArray]
    maps: list = field(default_factory=list)
    f: list = field(default_factory=list)
    a: list = field(default_factory=list)
    f_up: list = field(default_factory=list)
    a_up: list = field(default_factory=list)
    fields: list = field(default_factory=list)

    def __post_init__(self):
        for l, (q, k, v) in enumerate(zip(self.q, self.k, self.v), start=1):
            if k.shape[1:] != v.shape[1:]:
                raise ShapeError(f"scale {l}: key {k.shape} and value {v.shape} differ spatially")


def build_pyramid(lr_up, ref, stack: EncoderStack) -> FeaturePyramid:
    """Encode the upsampled LR image (queries) and the Ref image (keys, values)."""
    if stack.trainable:
        q = encode(lr_up, stack, "query")
        k = encode(ref, stack, "key")
        v = encode(ref, stack, "value")
    else:
        with no_grad():
            q = encode(lr_up, stack, "query")
            k = encode(ref, stack, "key")
            v = encode(ref, stack, "value")
    return FeaturePyramid(q, k, v)

"""Procedural texture pairs, bicubic degradation and augmentation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from ..encoder import ImagePlane, resize
from ..errors import ShapeError


@dataclass
class SamplePair:
    lr: ImagePlane
    hr: ImagePlane
    ref: ImagePlane


def degrade(hr: ImagePlane, factor: int = 4) -> ImagePlane:
    """Antialiased bicubic downsampling by ``factor``."""
    h, w = hr.height, hr.width
    if h % factor or w % factor:
        raise ShapeError(f"image {h}x{w} is not divisible by the scale factor {factor}")
    return ImagePlane(np.clip(resize(hr.pixels, h // factor, w // factor), 0.0, 1.0))


# -- procedural textures ----------------------------------------------------

def _value_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    grid = rng.uniform(size=(1, cells, cells))
    return resize(grid, size, size)[0]


def make_texture(rng: np.random.Generator, size: int = 160) -> np.ndarray:
    """Multi-octave value noise overlaid with stripes, discs and a checker patch, as [3,H,W]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    noise = sum(_value_noise(rng, size, c) / (i + 1) for i, c in enumerate((4, 8, 16, 32)))
    noise = (noise - noise.min()) / max(noise.max() - noise.min(), 1e-12)
    layers = []
    for _ in range(3):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(0.1, 0.4)
        stripes = 0.5 + 0.5 * np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy)
                                     + rng.uniform(0, 2 * np.pi))
        layers.append(stripes)
    img = np.empty((3, size, size))
    mix = rng.uniform(0.2, 0.8, size=(3, 4))
    for c in range(3):
        img[c] = mix[c, 0] * noise + mix[c, 1] * layers[c] + mix[c, 2] * layers[(c + 1) % 3]
    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0, size, size=2)
        rad = rng.uniform(size / 20, size / 6)
        color = rng.uniform(0, 1.5, size=3)
        disc = ((yy - cy) ** 2 + (xx - cx) ** 2) < rad ** 2
        img[:, disc] = color[:, None]
    cell = int(rng.integers(4, 9))
    y0, x0 = (int(v) for v in rng.integers(0, size // 2, size=2))
    span = size // 3
    checker = ((yy[y0:y0 + span, x0:x0 + span] // cell + xx[y0:y0 + span, x0:x0 + span] // cell) % 2)
    img[:, y0:y0 + span, x0:x0 + span] = checker[None] * rng.uniform(0.5, 1.5, size=(3, 1, 1))
    img -= img.min()
    return np.clip(img / max(img.max(), 1e-12), 0.0, 1.0)


def make_pair(rng: np.random.Generator, hr_size: int = 160, scale: int = 4,
              ref_kind: str = "gt") -> SamplePair:
    """HR texture, its bicubic LR, and a Ref image.

    ``ref_kind``: ``"gt"`` uses the HR image itself, ``"shifted"`` cyclically
    shifts it, ``"noise"`` draws uniform noise, ``"texture"`` draws an
    unrelated texture.
    """
    hr = ImagePlane(make_texture(rng, hr_size))
    lr = degrade(hr, scale)
    return SamplePair(lr, hr, make_ref(rng, hr, ref_kind))


def make_ref(rng: np.random.Generator, hr: ImagePlane, kind: str = "gt") -> ImagePlane:
    if kind == "gt":
        return ImagePlane(hr.pixels.copy())
    if kind == "shifted":
        lim = max(1, hr.height // 8)
        dy, dx = (int(v) for v in rng.integers(-lim, lim + 1, size=2))
        return ImagePlane(np.roll(hr.pixels, (dy, dx), axis=(1, 2)))
    if kind == "noise":
        return ImagePlane(rng.uniform(size=hr.pixels.shape))
    if kind == "texture":
        return ImagePlane(make_texture(rng, hr.height))
    raise ValueError(f"unknown ref kind {kind!r}")


# -- augmentation ------------------------------------------------------------

def geometric(pixels: np.ndarray, flip_h: bool, flip_v: bool, rot90: int) -> np.ndarray:
    out = pixels
    if flip_h:
        out = out[:, :, ::-1]
    if flip_v:
        out = out[:, ::-1, :]
    if rot90 % 4:
        out = np.rot90(out, rot90, axes=(1, 2))
    return np.ascontiguousarray(out)


def color_jitter(pixels: np.ndarray, brightness: float = 1.0, contrast: float = 1.0,
                 hue: float = 0.0) -> np.ndarray:
    """Scale brightness, scale contrast about the gray mean, rotate hue by a fraction of a turn."""
    out = pixels
    if brightness != 1.0:
        out = np.clip(out * brightness, 0.0, 1.0)
    if contrast != 1.0:
        gray = (0.299 * out[0] + 0.587 * out[1] + 0.114 * out[2]).mean()
        out = np.clip((out - gray) * contrast + gray, 0.0, 1.0)
    if hue != 0.0:
        hsv = rgb_to_hsv(np.clip(out.transpose(1, 2, 0), 0.0, 1.0))
        hsv[..., 0] = np.mod(hsv[..., 0] + hue, 1.0)
        out = np.clip(hsv_to_rgb(hsv).transpose(2, 0, 1), 0.0, 1.0)
    return out


def random_jitter(pixels: np.ndarray, rng: np.random.Generator, brightness: float,
                  contrast: float, hue: float) -> np.ndarray:
    b = rng.uniform(1.0 - brightness, 1.0 + brightness) if brightness else 1.0
    c = rng.uniform(1.0 - contrast, 1.0 + contrast) if contrast else 1.0
    h = rng.uniform(-hue, hue) if hue else 0.0
    return color_jitter(pixels, b, c, h)


def augment(pair: SamplePair, rng: np.random.Generator, brightness: float = 0.1,
            contrast: float = 0.1, hue: float = 0.05, flips: bool = True,
            rotations: bool = True) -> SamplePair:
    """Same flip/rotation for LR and HR; independent photometric jitter for the Ref."""
    flip_h = bool(rng.integers(2)) if flips else False
    flip_v = bool(rng.integers(2)) if flips else False
    rot = int(rng.integers(4)) if rotations else 0
    lr = ImagePlane(geometric(pair.lr.pixels, flip_h, flip_v, rot))
    hr = ImagePlane(geometric(pair.hr.pixels, flip_h, flip_v, rot))
    ref = ImagePlane(random_jitter(pair.ref.pixels, rng, brightness, contrast, hue))
    return SamplePair(lr, hr, ref)

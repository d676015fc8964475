"""Run configuration with the default training hyperparameters and the tiny test preset."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..aggregate import GeneratorConfig
from ..errors import ConfigError

# brightness/contrast half-range and hue half-range per robustness group
JITTER_LEVELS = {
    "none": (0.0, 0.0),
    "small": (0.10, 0.05),
    "medium": (0.25, 0.10),
    "large": (0.40, 0.20),
}


@dataclass
class RunConfig:
    seed: int = 0
    scale: int = 4
    lr_patch: int = 40
    hr_patch: int = 160
    batch_size: int = 9
    learning_rate: float = 1e-4
    critic_learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda1: float = 1e-4
    lambda2: float = 1e-6
    gp_weight: float = 10.0
    k: int = 1
    r: float = 10.0
    patch_size: int = 3
    widths: tuple = (64, 128, 256)
    window: int = 4
    heads: int = 2
    stl_blocks: int = 2
    rel_pos_bias: bool = False
    match_per_scale: bool = False
    train_encoder: bool = False
    critic_width: int = 8
    mode: str = "rec"
    steps: int = 200
    augment: bool = True
    brightness: float = 0.10
    contrast: float = 0.10
    hue: float = 0.05
    flips: bool = True
    rotations: bool = True

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.validate()

    def validate(self) -> None:
        if self.mode not in ("rec", "all"):
            raise ConfigError(f"mode must be 'rec' or 'all', got {self.mode!r}")
        if self.hr_patch != self.lr_patch * self.scale:
            raise ConfigError(f"hr_patch {self.hr_patch} != lr_patch {self.lr_patch} x scale {self.scale}")
        if self.lr_patch % 4 or self.scale < 1:
            raise ConfigError("lr_patch must be divisible by 4 and scale positive")
        if len(self.widths) != 3 or min(self.widths) < 1:
            raise ConfigError(f"widths must be three positive ints, got {self.widths}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must be in (0,1), got {v}")
        for name in ("learning_rate", "critic_learning_rate", "lambda1", "lambda2", "gp_weight",
                     "brightness", "contrast", "hue"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.adam_eps <= 0 or self.r <= 0:
            raise ConfigError("adam_eps and r must be positive")
        if self.batch_size < 1 or self.k < 1 or self.steps < 0:
            raise ConfigError("batch_size and k must be >= 1 and steps >= 0")
        if self.patch_size % 2 == 0:
            raise ConfigError(f"patch_size must be odd, got {self.patch_size}")
        if any(w % self.heads for w in self.widths):
            raise ConfigError(f"heads={self.heads} must divide every width in {self.widths}")

    @classmethod
    def tiny(cls, **overrides) -> "RunConfig":
        """Toy widths for desk-scale tests."""
        base = dict(widths=(4, 8, 16), window=2, heads=1, stl_blocks=1, batch_size=1)
        base.update(overrides)
        return cls(**base)

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(widths=self.widths, window=self.window, heads=self.heads,
                               blocks=self.stl_blocks, k=self.k, r=self.r,
                               rel_pos_bias=self.rel_pos_bias)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_overrides(self, **kv) -> "RunConfig":
        known = {f.name for f in fields(self)}
        unknown = sorted(set(kv) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return replace(self, **kv)

"""Model bundle (encoders, generator, critic) and checkpoint directories."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from ..aggregate import Generator, synthesize
from ..encoder import EncoderStack, FeaturePyramid, ImagePlane, bicubic_upsample, build_pyramid, seeded_init
from ..errors import ShapeError
from ..losses import Critic
from ..matcher import pyramid_maps
from ..numerics import NdArray, ndar
from .config import RunConfig


class CheckpointError(FileNotFoundError):
    """Checkpoint directory missing or incomplete."""


class RefSRModel:
    def __init__(self, config: RunConfig, stack: EncoderStack, generator: Generator,
                 critic: Optional[Critic] = None):
        self.config = config
        self.stack = stack
        self.generator = generator
        self.critic = critic

    @classmethod
    def init(cls, config: RunConfig) -> "RefSRModel":
        stack = seeded_init(config.seed, config.widths)
        if config.train_encoder:
            stack.trainable = True
            stack.refresh()
        gen = Generator.init(config.generator_config(), config.seed + 1)
        critic = Critic.init(config.seed + 2, config.critic_width) if config.mode == "all" else None
        return cls(config, stack, gen, critic)

    def trainable(self) -> Dict[str, NdArray]:
        params = {f"gen/{k}": v for k, v in self.generator.params.items()}
        if self.config.train_encoder:
            params.update({f"enc/{k}": v for k, v in self.stack.arrays.items()})
        return params

    # -- forward -----------------------------------------------------------
    def prepare(self, lr: ImagePlane, ref: ImagePlane):
        """Upsample LR, encode both images, attach correspondence maps."""
        if lr.height % 4 or lr.width % 4 or ref.height % 4 or ref.width % 4:
            raise ShapeError("LR and Ref dimensions must be divisible by 4")
        lr_up = bicubic_upsample(lr, self.config.scale)
        pyr = build_pyramid(lr_up.pixels, ref.pixels, self.stack)
        pyr.maps = pyramid_maps(pyr.q, pyr.k, self.config.k, self.config.patch_size,
                                self.config.match_per_scale)
        return lr_up, pyr

    def forward(self, lr_up: ImagePlane, pyr: FeaturePyramid, **kwargs) -> NdArray:
        return synthesize(self.generator.forward(lr_up, pyr, **kwargs), lr_up)

    def super_resolve(self, lr: ImagePlane, ref: ImagePlane, **kwargs) -> NdArray:
        lr_up, pyr = self.prepare(lr, ref)
        return self.forward(lr_up, pyr, **kwargs)

    # -- persistence -------------------------------------------------------
    def _tensors(self) -> Dict[str, np.ndarray]:
        out = {f"enc/{k}": v.data for k, v in self.stack.arrays.items()}
        out.update({f"gen/{k}": v.data for k, v in self.generator.params.items()})
        if self.critic is not None:
            out.update({f"critic/{k}": v.data for k, v in self.critic.params.items()})
        return out

    def save(self, directory, step: int = 0) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for name, value in self._tensors().items():
            fname = name.replace("/", "__") + ".ndar"
            ndar.save(directory / fname, value)
            entries.append({"name": name, "shape": list(value.shape), "file": fname})
        manifest = {"config": self.config.to_dict(), "seed": self.config.seed, "step": int(step),
                    "params": entries}
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return directory

    @classmethod
    def load(cls, directory) -> "RefSRModel":
        directory = Path(directory)
        manifest_path = directory / "manifest.json"
        if not manifest_path.is_file():
            raise CheckpointError(f"no checkpoint manifest at {manifest_path}")
        manifest = json.loads(manifest_path.read_text())
        config = RunConfig.from_dict(manifest["config"])
        tensors = {}
        for entry in manifest["params"]:
            path = directory / entry["file"]
            if not path.is_file():
                raise CheckpointError(f"checkpoint is missing {path.name}")
            arr = ndar.load(path)
            if list(arr.shape) != entry["shape"]:
                raise CheckpointError(f"{entry['name']}: manifest shape {entry['shape']} "
                                      f"but dump has {list(arr.shape)}")
            tensors[entry["name"]] = arr
        model = cls.init(config)
        for name, arr in tensors.items():
            group, key = name.split("/", 1)
            if group == "enc":
                model.stack.params[key][...] = arr
            elif group == "gen":
                model.generator.params[key].data[...] = arr
            elif group == "critic" and model.critic is not None:
                model.critic.params[key].data[...] = arr
        model.stack.refresh()
        return model

    def zero_(self) -> "RefSRModel":
        """Zero every generator parameter (the network then returns the bicubic image)."""
        self.generator.zero_()
        return self

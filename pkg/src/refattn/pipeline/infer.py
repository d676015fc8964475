"""End-to-end inference from a checkpoint, with optional intermediate dumps."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np

from ..aggregate import StageRecord, export_image
from ..encoder import FeaturePyramid, ImagePlane
from ..matcher import similarity_map
from ..numerics import ndar, no_grad
from .imageio import write_png
from .model import RefSRModel


@dataclass
class SrResult:
    image: ImagePlane
    lr_up: ImagePlane
    pyramid: FeaturePyramid
    records: List[StageRecord]

    def top1_similarity(self, scale: int) -> np.ndarray:
        return similarity_map(self.pyramid.maps[scale - 1])


def dump_intermediates(result: SrResult, directory) -> Path:
    """NDAR dumps of attention features, offsets, masks and similarity maps per scale."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for rec in result.records:
        tag = f"{rec.path}{rec.scale}"
        ndar.save(directory / f"attention_{tag}.ndar", rec.attention.data)
        ndar.save(directory / f"offsets_{tag}.ndar", rec.fields.offsets.data)
        ndar.save(directory / f"masks_{tag}.ndar", rec.fields.masks.data)
    for l, cmap in enumerate(result.pyramid.maps, start=1):
        ndar.save(directory / f"similarity_s{l}.ndar", similarity_map(cmap))
        cmap.save(directory / f"correspondence_s{l}.ndar")
    return directory


def run_sr(lr: ImagePlane, ref: ImagePlane, checkpoint: Union[str, Path, RefSRModel],
           dump_dir=None, out_png=None) -> SrResult:
    """Super-resolve ``lr`` with ``ref``; the output image is clamped to [0,1].

    ``checkpoint`` is a checkpoint directory or an already loaded model; a
    missing directory raises CheckpointError.
    """
    model = checkpoint if isinstance(checkpoint, RefSRModel) else RefSRModel.load(checkpoint)
    records: List[StageRecord] = []
    with no_grad():
        lr_up, pyr = model.prepare(lr, ref)
        sr = model.forward(lr_up, pyr, records=records)
    result = SrResult(export_image(sr), lr_up, pyr, records)
    if dump_dir is not None:
        dump_intermediates(result, dump_dir)
    if out_png is not None:
        write_png(out_png, result.image)
    return result

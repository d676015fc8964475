"""Configuration, data, training, inference and command line."""
from .config import JITTER_LEVELS, RunConfig
from .data import SamplePair, augment, color_jitter, degrade, make_pair, make_ref, make_texture
from .model import CheckpointError, RefSRModel
__all__ = ["JITTER_LEVELS", "RunConfig", "SamplePair", "augment", "color_jitter", "degrade", "make_pair",
           "make_ref", "make_texture", "CheckpointError", "RefSRModel"]

"""Masked image modeling without reconstruction.

A student vision transformer sees only visible patches; its multi-level
features are mixed by a learnable alignment matrix and matched to a frozen
teacher's intact-image features under a smooth-L1 loss. The package covers
the full desk-scale pipeline: tensor engine with reverse-mode autodiff, ViT
encoder, masking strategies, alignment head, checkpoint IO, training loops,
and a CLI with an attention-map exporter and a paradigm cost benchmark.
"""

from . import backend
from .errors import (CheckpointError, ConfigError, CorruptionError, DataError,
                     FormatError, MaskAlignError, ShapeError, TrainingDiverged,
                     VersionError)
from .tensor import Tape, Tensor, backward

__version__ = "0.1.0"

"""Speaker-aware masked Transformer for emotion recognition in conversation."""

from .data import Conversation, DatasetSplit, LabelMap, Utterance
from .masks import MaskSet, build_masks
from .model import ModelConfig, SingleStackTRM, TRMSM
from .trainer import TrainConfig, train

__all__ = [
    "Conversation",
    "DatasetSplit",
    "LabelMap",
    "MaskSet",
    "ModelConfig",
    "SingleStackTRM",
    "TRMSM",
    "TrainConfig",
    "Utterance",
    "build_masks",
    "train",
]
__version__ = "0.1.0"

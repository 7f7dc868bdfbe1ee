"""Full hierarchical model and the dedicated single-stack baseline."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional

import numpy as np

from . import autograd as ag
from .data import Conversation
from .dialogue import BlockConfig, DialogueEncoder, RngKey, TransformerStack, PositionalEmbedding, normalize_blocks
from .encoder import EncoderConfig, UtteranceEncoder
from .fusion import FusionConfig, FusionHead, predict
from .masks import BLOCKS, MaskSet, build_masks


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 6
    provider: str = "trainable-bow"
    vocab_hash_buckets: int = 2 ** 15
    d_w: int = 300
    d_u: int = 300
    heads: int = 6
    layers: int = 6
    d_ff: Optional[int] = None
    dropout: float = 0.1
    positional: str = "sinusoidal"
    fusion: str = "att"
    blocks: tuple[str, ...] = BLOCKS
    window: Optional[tuple[int, int]] = None
    causal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "blocks", normalize_blocks(self.blocks))
        if self.window is not None:
            object.__setattr__(self, "window", (int(self.window[0]), int(self.window[1])))
        self.encoder_config()
        self.block_config()
        self.fusion_config()

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.provider, self.vocab_hash_buckets, self.d_w, self.d_u)

    def block_config(self) -> BlockConfig:
        return BlockConfig(self.d_u, self.heads, self.layers, self.d_ff, self.dropout, self.positional)

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(self.fusion, self.d_u, self.num_classes, len(self.blocks))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = list(self.blocks)
        d["window"] = None if self.window is None else list(self.window)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        d = dict(d)
        d["blocks"] = tuple(d.get("blocks", BLOCKS))
        if d.get("window") is not None:
            d["window"] = tuple(d["window"])
        return cls(**d)


@dataclass
class ModelOutput:
    logits: ag.Tensor
    probs: np.ndarray
    fusion_weights: Optional[np.ndarray] = None
    attention_records: dict[str, list[np.ndarray]] = field(default_factory=dict)
    masks: Optional[MaskSet] = None

    @property
    def predictions(self) -> np.ndarray:
        return predict(self.probs)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class TRMSM(ag.Module):
    """Utterance encoder -> positional embedding -> masked stacks -> fusion -> classifier."""

    def __init__(self, config: ModelConfig, seed: int = 0,
                 vectors: Optional[Mapping[tuple[str, int], np.ndarray]] = None):
        self.config = config
        self.seed = seed
        init = ag.Initializer(seed)
        self.encoder = UtteranceEncoder(config.encoder_config(), init, vectors)
        self.dialogue = DialogueEncoder(config.block_config(), init, config.blocks)
        self.head = FusionHead(config.fusion_config(), init)

    def masks_for(self, conv: Conversation, window: Optional[tuple[int, int]] = None) -> MaskSet:
        return build_masks(conv.speakers, window if window is not None else self.config.window,
                           self.config.causal)

    def __call__(self, conv: Conversation, train: bool = False, rng_key: RngKey = None,
                 window: Optional[tuple[int, int]] = None, probe: bool = False) -> ModelOutput:
        masks = self.masks_for(conv, window)
        c = self.encoder.encode_conversation(conv)
        outs = self.dialogue.run_blocks(c, masks, train=train, rng_key=rng_key, probe=probe)
        fused, alpha = self.head.fuse([t for _, t in outs.present()])
        logits = self.head.logits(fused)
        return ModelOutput(
            logits=logits,
            probs=_softmax_rows(logits.data),
            fusion_weights=None if alpha is None else alpha.data.copy(),
            attention_records=outs.attention_records,
            masks=masks,
        )


class SingleStackTRM(ag.Module):
    """Context-only baseline: one unmasked stack feeding the classifier directly.

    Parameter names coincide with ``TRMSM`` built with only the conventional
    block, so the same seed yields the same weights.
    """

    def __init__(self, config: ModelConfig, seed: int = 0,
                 vectors: Optional[Mapping[tuple[str, int], np.ndarray]] = None):
        self.config = config
        self.seed = seed
        init = ag.Initializer(seed)
        block_cfg = config.block_config()
        self.encoder = UtteranceEncoder(config.encoder_config(), init, vectors)
        self.position = PositionalEmbedding(block_cfg, init)
        self.stack = TransformerStack(block_cfg, init, "blocks.conventional")
        self.classifier = ag.Linear(init, "classifier", config.d_u, config.num_classes)

    def __call__(self, conv: Conversation, train: bool = False, rng_key: RngKey = None,
                 window: Optional[tuple[int, int]] = None, probe: bool = False) -> ModelOutput:
        masks = build_masks(conv.speakers, window if window is not None else self.config.window,
                            self.config.causal)
        records = [] if probe else None
        x = self.position(self.encoder.encode_conversation(conv))
        logits = self.classifier(self.stack(x, masks.conventional, train, rng_key, records))
        return ModelOutput(logits, _softmax_rows(logits.data),
                           attention_records={"conventional": records} if probe else {}, masks=masks)


def build_model(config: ModelConfig, seed: int = 0,
                vectors: Optional[Mapping[tuple[str, int], np.ndarray]] = None) -> TRMSM:
    return TRMSM(config, seed, vectors)

"""Fusion of block outputs (add / cat / att), the classifier and the training loss."""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag

FUSION_MODES = ("add", "cat", "att")


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "att"
    d_u: int = 300
    K: int = 6
    n_blocks: int = 3

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.mode!r}; expected one of {FUSION_MODES}")
        if not 1 <= self.n_blocks <= 3:
            raise ValueError("between one and three blocks can be fused")

    @property
    def classifier_width(self) -> int:
        return self.n_blocks * self.d_u if self.mode == "cat" else self.d_u


class FusionHead(ag.Module):
    def __init__(self, config: FusionConfig, init: ag.Initializer):
        self.config = config
        self.w_f = init.glorot("fusion.w", (config.d_u, 1)) if config.mode == "att" else None
        self.classifier = ag.Linear(init, "classifier", config.classifier_width, config.K)

    def fuse(self, outputs: Sequence[ag.Tensor]) -> tuple[ag.Tensor, Optional[ag.Tensor]]:
        """Combine the enabled block outputs; also returns the N x B fusion weights in att mode."""
        cfg = self.config
        if len(outputs) != cfg.n_blocks:
            raise ag.DimensionError(f"expected {cfg.n_blocks} block outputs, got {len(outputs)}")
        shapes = {o.shape for o in outputs}
        if len(shapes) != 1:
            raise ag.DimensionError(f"block outputs differ in shape: {sorted(shapes)}")
        if cfg.mode == "add":
            return functools.reduce(ag.add, outputs), None
        if cfg.mode == "cat":
            return ag.concat(outputs, axis=-1), None
        n, d = outputs[0].shape
        stacked = ag.stack(outputs, axis=1)  # N x B x d_u
        alpha = ag.softmax(ag.reshape(ag.matmul(stacked, self.w_f), (n, cfg.n_blocks)), axis=-1)
        fused = ag.matmul(ag.reshape(alpha, (n, 1, cfg.n_blocks)), stacked)
        return ag.reshape(fused, (n, d)), alpha

    def logits(self, r: ag.Tensor) -> ag.Tensor:
        if r.shape[-1] != self.config.classifier_width:
            raise ag.DimensionError(f"classifier expects width {self.config.classifier_width}, got {r.shape[-1]}")
        return self.classifier(r)

    def classify(self, r: ag.Tensor) -> ag.Tensor:
        """Row-wise emotion distributions."""
        return ag.softmax(self.logits(r), axis=-1)


def predict(probs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(probs, axis=-1)


def loss(outputs: Sequence[ag.Tensor], labels: Sequence[Sequence[Optional[int]]],
         from_logits: bool = True) -> ag.Tensor:
    """Summed NLL over every utterance of every conversation, divided by the utterance total.

    ``outputs`` holds one N_l x K matrix per conversation: pre-softmax scores
    when ``from_logits`` is true, otherwise probabilities.
    """
    if len(outputs) != len(labels):
        raise ValueError(f"{len(outputs)} outputs for {len(labels)} label sequences")
    total = 0
    terms = []
    for out, ys in zip(outputs, labels):
        if any(y is None for y in ys):
            raise ValueError("every utterance needs a label to compute the loss")
        log_probs = ag.log_softmax(out, axis=-1) if from_logits else ag.log(out)
        terms.append(ag.nll(log_probs, list(ys), reduction="sum"))
        total += len(ys)
    return ag.scale(functools.reduce(ag.add, terms), 1.0 / total)

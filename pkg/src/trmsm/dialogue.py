"""Dialogue-level encoder: positional embedding and three masked Transformer stacks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import autograd as ag
from .masks import BLOCKS, MaskSet

POSITIONAL_KINDS = ("sinusoidal", "learned")


@dataclass(frozen=True)
class BlockConfig:
    d_u: int = 300
    heads: int = 6
    layers: int = 6
    d_ff: Optional[int] = None
    dropout: float = 0.1
    positional: str = "sinusoidal"
    max_positions: int = 512

    def __post_init__(self):
        if self.d_u <= 0 or self.heads <= 0 or self.layers <= 0:
            raise ValueError("d_u, heads and layers must be positive")
        if self.d_u % self.heads:
            raise ValueError(f"d_u={self.d_u} is not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.positional not in POSITIONAL_KINDS:
            raise ValueError(f"positional must be one of {POSITIONAL_KINDS}")

    @property
    def d_a(self) -> int:
        return self.d_u // self.heads

    @property
    def ffn_dim(self) -> int:
        return self.d_ff or 4 * self.d_u


def sinusoidal_table(n: int, d: int) -> np.ndarray:
    """Rows 0..n-1 of the fixed table: sin on even dims, cos on odd dims."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(d)
    freq = np.power(10000.0, -(i - i % 2) / d)
    angles = pos * freq[None, :]
    return np.where(i % 2 == 0, np.sin(angles), np.cos(angles))


RngKey = Optional[tuple[int, int]]


def _rng(key: RngKey, site: str):
    return None if key is None else ag.dropout_rng(key[0], key[1], site)


class TransformerLayer(ag.Module):
    """Post-norm layer: masked multi-head attention then a ReLU FFN, each with residual + LayerNorm."""

    def __init__(self, config: BlockConfig, init: ag.Initializer, name: str):
        d = config.d_u
        self.config = config
        self.name = name
        self.query = ag.Linear(init, f"{name}.attn.query", d, d, bias=False)
        self.key = ag.Linear(init, f"{name}.attn.key", d, d, bias=False)
        self.value = ag.Linear(init, f"{name}.attn.value", d, d, bias=False)
        self.output = ag.Linear(init, f"{name}.attn.output", d, d, bias=False)
        self.norm1 = ag.LayerNorm(init, f"{name}.norm1", d)
        self.ffn_in = ag.Linear(init, f"{name}.ffn.in", d, config.ffn_dim)
        self.ffn_out = ag.Linear(init, f"{name}.ffn.out", config.ffn_dim, d)
        self.norm2 = ag.LayerNorm(init, f"{name}.norm2", d)

    def _heads(self, x: ag.Tensor) -> ag.Tensor:
        n = x.shape[0]
        return ag.transpose(ag.reshape(x, (n, self.config.heads, self.config.d_a)), (1, 0, 2))

    def __call__(self, x: ag.Tensor, mask: np.ndarray, train: bool = False,
                 rng_key: RngKey = None, record: Optional[list] = None) -> ag.Tensor:
        cfg = self.config
        n = x.shape[0]
        if mask.shape != (n, n):
            raise ag.DimensionError(f"mask {mask.shape} does not match {n} positions")
        q, k, v = self._heads(self.query(x)), self._heads(self.key(x)), self._heads(self.value(x))
        scores = ag.scale(ag.matmul(q, ag.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(cfg.d_a))
        weights = ag.masked_softmax(scores, mask)
        if record is not None:
            record.append(weights.data.copy())
        weights = ag.dropout(weights, cfg.dropout, _rng(rng_key, f"{self.name}.attn.dropout"), train)
        context = ag.reshape(ag.transpose(ag.matmul(weights, v), (1, 0, 2)), (n, cfg.d_u))
        attended = self.norm1(ag.add(self.output(context), x))
        ffn = self.ffn_out(ag.relu(self.ffn_in(attended)))
        ffn = ag.dropout(ffn, cfg.dropout, _rng(rng_key, f"{self.name}.ffn.dropout"), train)
        return self.norm2(ag.add(ffn, attended))


class TransformerStack(ag.Module):
    def __init__(self, config: BlockConfig, init: ag.Initializer, name: str):
        self.name = name
        self.layers = [TransformerLayer(config, init, f"{name}.layers.{i}") for i in range(config.layers)]

    def __call__(self, x: ag.Tensor, mask: np.ndarray, train: bool = False,
                 rng_key: RngKey = None, records: Optional[list] = None) -> ag.Tensor:
        for layer in self.layers:
            x = layer(x, mask, train, rng_key, records)
        return x


class PositionalEmbedding(ag.Module):
    def __init__(self, config: BlockConfig, init: ag.Initializer, name: str = "dialogue.position"):
        self.config = config
        self.table = init.normal(name, (config.max_positions, config.d_u), std=0.02) \
            if config.positional == "learned" else None

    def __call__(self, c: ag.Tensor) -> ag.Tensor:
        n, d = c.shape
        if self.table is None:
            return ag.add(c, ag.Tensor(sinusoidal_table(n, d)))
        if n > self.config.max_positions:
            raise ag.DimensionError(f"{n} utterances exceed the learned table of {self.config.max_positions}")
        return ag.add(c, ag.embedding(self.table, range(n)))


@dataclass
class EncoderOutputs:
    conventional: Optional[ag.Tensor] = None
    intra: Optional[ag.Tensor] = None
    inter: Optional[ag.Tensor] = None
    # block -> per-layer arrays of shape (heads, N, N); filled in probe mode only
    attention_records: dict[str, list[np.ndarray]] = field(default_factory=dict)

    def present(self) -> list[tuple[str, ag.Tensor]]:
        return [(b, getattr(self, b)) for b in BLOCKS if getattr(self, b) is not None]


def normalize_blocks(blocks: Iterable[str]) -> tuple[str, ...]:
    """Canonical, ordered block tuple; accepts C/RA/ER shorthands."""
    alias = {"c": "conventional", "cm": "conventional", "ra": "intra", "er": "inter"}
    chosen = set()
    for b in blocks:
        b = b.strip().lower()
        b = alias.get(b, b)
        if b not in BLOCKS:
            raise ValueError(f"unknown block {b!r}; expected a subset of {BLOCKS}")
        chosen.add(b)
    if not chosen:
        raise ValueError("at least one block must be enabled")
    return tuple(b for b in BLOCKS if b in chosen)


class DialogueEncoder(ag.Module):
    def __init__(self, config: BlockConfig, init: ag.Initializer, blocks: Iterable[str] = BLOCKS):
        self.config = config
        self.blocks = normalize_blocks(blocks)
        self.position = PositionalEmbedding(config, init)
        self.stacks = {b: TransformerStack(config, init, f"blocks.{b}") for b in self.blocks}

    def add_positional(self, c: ag.Tensor) -> ag.Tensor:
        return self.position(c)

    def run_blocks(self, c: ag.Tensor, masks: MaskSet, enabled: Optional[Iterable[str]] = None,
                   train: bool = False, rng_key: RngKey = None, probe: bool = False) -> EncoderOutputs:
        """Add positions once, then run each enabled stack under its own mask."""
        enabled = self.blocks if enabled is None else normalize_blocks(enabled)
        missing = [b for b in enabled if b not in self.stacks]
        if missing:
            raise ValueError(f"blocks {missing} were not built into this encoder")
        x = self.add_positional(c)
        out = EncoderOutputs()
        for block in enabled:
            records = [] if probe else None
            setattr(out, block, self.stacks[block](x, masks[block], train, rng_key, records))
            if probe:
                out.attention_records[block] = records
        return out

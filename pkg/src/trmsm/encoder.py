"""Sentence-level encoder: one d_u vector per utterance.

Two providers stand in for a pretrained sentence model:

* ``trainable-bow`` hashes each token into a bucket of a trainable
  embedding table (d_w wide), max-pools the token vectors and projects the
  result to d_u.
* ``precomputed`` reads a fixed d_w vector per (conversation id, utterance
  index) from a vectors file and applies the same trainable projection.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import autograd as ag
from . import binfmt
from .data import Conversation, Utterance

VECTORS_MAGIC = b"TRMSMVEC"
PROVIDERS = ("trainable-bow", "precomputed")


@dataclass(frozen=True)
class EncoderConfig:
    provider: str = "trainable-bow"
    vocab_hash_buckets: int = 2 ** 15
    d_w: int = 300
    d_u: int = 300

    def __post_init__(self):
        if self.provider not in PROVIDERS:
            raise ValueError(f"unknown provider {self.provider!r}; expected one of {PROVIDERS}")
        if self.d_w <= 0 or self.d_u <= 0 or self.vocab_hash_buckets <= 0:
            raise ValueError("encoder dimensions must be positive")


def bucket(token: str, buckets: int) -> int:
    return zlib.crc32(token.encode("utf-8")) % buckets


class UtteranceEncoder(ag.Module):
    def __init__(self, config: EncoderConfig, init: ag.Initializer,
                 vectors: Optional[Mapping[tuple[str, int], np.ndarray]] = None):
        self.config = config
        if config.provider == "trainable-bow":
            self.embedding = init.normal("encoder.embedding", (config.vocab_hash_buckets, config.d_w))
            self.vectors = None
        else:
            if vectors is None:
                raise ValueError("precomputed provider needs a vectors mapping")
            self.embedding = None
            self.vectors = vectors
        self.proj = ag.Linear(init, "encoder.proj", config.d_w, config.d_u)

    def token_ids(self, tokens: Sequence[str]) -> list[int]:
        return [bucket(t, self.config.vocab_hash_buckets) for t in tokens]

    def _lookup(self, conv_id: str, index: int) -> np.ndarray:
        try:
            vec = self.vectors[(conv_id, index)]
        except KeyError:
            raise KeyError(f"no precomputed vector for conversation {conv_id!r} utterance {index}") from None
        if vec.shape != (self.config.d_w,):
            raise ag.DimensionError(f"vector for ({conv_id!r}, {index}) has shape {vec.shape}, expected ({self.config.d_w},)")
        return vec

    def encode_utterance(self, utterance: Utterance, key: Optional[tuple[str, int]] = None) -> ag.Tensor:
        if self.embedding is not None:
            words = ag.embedding(self.embedding, self.token_ids(utterance.tokens))
            pooled = ag.segment_max(words, [len(utterance.tokens)])
        else:
            if key is None:
                raise KeyError("precomputed provider needs a (conversation id, utterance index) key")
            pooled = ag.Tensor(self._lookup(*key)[None, :])
        return ag.reshape(self.proj(pooled), (self.config.d_u,))

    def encode_conversation(self, conv: Conversation) -> ag.Tensor:
        """Matrix of utterance vectors, one row per utterance in order."""
        if self.embedding is not None:
            ids, lengths = [], []
            for u in conv.utterances:
                ids.extend(self.token_ids(u.tokens))
                lengths.append(len(u.tokens))
            pooled = ag.segment_max(ag.embedding(self.embedding, ids), lengths)
        else:
            pooled = ag.Tensor(np.stack([self._lookup(conv.id, n) for n in range(len(conv))]))
        return self.proj(pooled)


# ---------------------------------------------------------------------------
# vectors file
# ---------------------------------------------------------------------------

def write_vectors(path: Union[str, Path], vectors: Mapping[tuple[str, int], np.ndarray]) -> None:
    """Write vectors sorted by key; ``entries`` holds (conversation id, utterance index, byte offset)."""
    keys = sorted(vectors)
    if not keys:
        raise ValueError("no vectors to write")
    dim = int(np.asarray(vectors[keys[0]]).shape[0])
    entries, chunks = [], []
    for n, key in enumerate(keys):
        vec = np.asarray(vectors[key], dtype="<f4")
        if vec.shape != (dim,):
            raise ag.DimensionError(f"vector {key} has shape {vec.shape}, expected ({dim},)")
        entries.append([key[0], int(key[1]), n * dim * 4])
        chunks.append(vec.tobytes())
    binfmt.write(path, VECTORS_MAGIC, {"dim": dim, "dtype": "<f4", "entries": entries}, b"".join(chunks))


def read_vectors(path: Union[str, Path]) -> dict[tuple[str, int], np.ndarray]:
    header, payload = binfmt.read(path, VECTORS_MAGIC)
    dim = int(header["dim"])
    out = {}
    for conv_id, index, offset in header["entries"]:
        chunk = payload[offset:offset + 4 * dim]
        if len(chunk) != 4 * dim:
            raise binfmt.FormatError(f"{path}: vector ({conv_id!r}, {index}) runs past end of file")
        out[(conv_id, int(index))] = np.frombuffer(chunk, dtype="<f4").astype(np.float64)
    return out

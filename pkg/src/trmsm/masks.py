"""Conventional, intra-speaker and inter-speaker attention masks.

All masks are boolean N x N validity matrices: ``mask[i, j]`` is true when
utterance ``i`` may attend to utterance ``j``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Optional, Sequence, Union

import numpy as np

BLOCKS = ("conventional", "intra", "inter")


@dataclass(frozen=True)
class MaskSet:
    conventional: np.ndarray
    intra: np.ndarray
    inter: np.ndarray
    window: Optional[tuple[int, int]] = None

    def __getitem__(self, block: str) -> np.ndarray:
        if block not in BLOCKS:
            raise KeyError(block)
        return getattr(self, block)

    @property
    def size(self) -> int:
        return self.conventional.shape[0]


def build_masks(speakers: Sequence[Hashable], window: Optional[tuple[int, int]] = None,
                causal: bool = False) -> MaskSet:
    """Build the three masks for a speaker sequence.

    ``window=(x, y)`` limits utterance ``i`` to positions ``i - x .. i + y``
    and is intersected into all three masks. ``causal`` drops all future
    positions (equivalent to ``y = 0``).
    """
    n = len(speakers)
    if n == 0:
        raise ValueError("speaker sequence is empty")
    idx = np.arange(n)
    offset = idx[None, :] - idx[:, None]  # j - i
    conventional = np.ones((n, n), dtype=bool)
    if window is not None:
        prior, post = window
        if prior < 0 or post < 0:
            raise ValueError(f"window extents must be non-negative, got {window}")
        conventional &= (offset >= -prior) & (offset <= post)
    if causal:
        conventional &= offset <= 0
    # compare speaker ids through dense codes so any hashable id works
    codes = {}
    ids = np.array([codes.setdefault(s, len(codes)) for s in speakers])
    same = ids[:, None] == ids[None, :]
    window_t = None if window is None else (int(window[0]), int(window[1]))
    return MaskSet(conventional, same & conventional, ~same & conventional, window_t)


@dataclass(frozen=True)
class MaskStats:
    counts: dict[str, list[int]]
    fully_masked: dict[str, list[bool]]


def mask_stats(masks: MaskSet) -> MaskStats:
    counts = {b: masks[b].sum(axis=1).astype(int).tolist() for b in BLOCKS}
    return MaskStats(counts, {b: [c == 0 for c in counts[b]] for b in BLOCKS})


def write_mask_csv(path: Union[str, Path], mask: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(mask, dtype=bool):
            writer.writerow(row.astype(int).tolist())


def read_mask_csv(path: Union[str, Path]) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        return np.array([[int(v) for v in row] for row in csv.reader(fh)], dtype=bool)

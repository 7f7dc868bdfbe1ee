"""Checkpoint files: a JSON manifest followed by flat little-endian parameter blobs.

Layout (see ``binfmt``): header JSON, then ``param_bytes`` bytes of float32
parameters in manifest order, then an optional float64 resume section
holding the exact training state (parameters plus both AdamW moments).
Offsets in each manifest are byte offsets from the start of their section.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from . import binfmt

MAGIC = b"TRMSMCK1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: dict
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    trainer_state: dict = field(default_factory=dict)
    resume: Optional[dict[str, np.ndarray]] = None

    @property
    def manifest(self) -> list[dict]:
        return _manifest(self.params, 4)


def _manifest(arrays: Mapping[str, np.ndarray], itemsize: int) -> list[dict]:
    entries, offset = [], 0
    for name in sorted(arrays):
        shape = list(np.shape(arrays[name]))
        entries.append({"name": name, "shape": shape, "offset": offset})
        offset += int(np.prod(shape, dtype=np.int64)) * itemsize
    return entries


def _pack(arrays: Mapping[str, np.ndarray], dtype: str) -> bytes:
    return b"".join(np.ascontiguousarray(arrays[name], dtype=dtype).tobytes() for name in sorted(arrays))


def _unpack(manifest: list[dict], blob: bytes, dtype: str, label: str) -> dict[str, np.ndarray]:
    itemsize = np.dtype(dtype).itemsize
    out = {}
    for entry in manifest:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        chunk = blob[start:start + count * itemsize]
        if len(chunk) != count * itemsize:
            raise binfmt.FormatError(f"{label}: {entry['name']} runs past end of blob")
        out[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(entry["shape"]).astype(np.float64)
    return out


def save(path: Union[str, Path], ckpt: Checkpoint) -> None:
    params_blob = _pack(ckpt.params, "<f4")
    header = {
        "format": "trmsm-checkpoint",
        "version": FORMAT_VERSION,
        "dtype": "<f4",
        "step": int(ckpt.step),
        "config": ckpt.config,
        "rng_state": ckpt.rng_state,
        "trainer_state": ckpt.trainer_state,
        "params": _manifest(ckpt.params, 4),
        "param_bytes": len(params_blob),
        "resume": None,
    }
    payload = params_blob
    if ckpt.resume is not None:
        header["resume"] = {"dtype": "<f8", "entries": _manifest(ckpt.resume, 8)}
        payload += _pack(ckpt.resume, "<f8")
    binfmt.write(path, MAGIC, header, payload)


def load(path: Union[str, Path]) -> Checkpoint:
    header, payload = binfmt.read(path, MAGIC)
    if header.get("version") != FORMAT_VERSION:
        raise binfmt.FormatError(f"{path}: unsupported checkpoint version {header.get('version')}")
    split = header["param_bytes"]
    params = _unpack(header["params"], payload[:split], "<f4", str(path))
    resume = None
    if header.get("resume"):
        resume = _unpack(header["resume"]["entries"], payload[split:], "<f8", str(path))
    return Checkpoint(params, header["config"], header["step"], header.get("rng_state", {}),
                      header.get("trainer_state", {}), resume)


def round_to_f32(state: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """What a checkpoint stores: every value rounded to float32 (held as float64)."""
    return {name: np.asarray(v, dtype=np.float32).astype(np.float64) for name, v in state.items()}

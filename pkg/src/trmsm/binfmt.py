"""Shared layout for the binary files (checkpoints, precomputed vectors).

    magic      8 bytes ASCII
    length     uint64 little-endian, size of the header in bytes
    header     UTF-8 JSON (keys sorted, no whitespace)
    payload    raw little-endian numbers, offsets given in the header
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO, Union

_LEN = struct.Struct("<Q")


class FormatError(ValueError):
    """File does not follow the expected binary layout."""


def dump_header(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def write(path: Union[str, Path], magic: bytes, header: dict, payload: bytes) -> None:
    assert len(magic) == 8
    raw = dump_header(header)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(_LEN.pack(len(raw)))
        fh.write(raw)
        fh.write(payload)


def read(path: Union[str, Path], magic: bytes) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        return read_stream(fh, magic, str(path))


def read_stream(fh: BinaryIO, magic: bytes, label: str = "<stream>") -> tuple[dict, bytes]:
    got = fh.read(8)
    if got != magic:
        raise FormatError(f"{label}: bad magic {got!r}, expected {magic!r}")
    size_raw = fh.read(_LEN.size)
    if len(size_raw) != _LEN.size:
        raise FormatError(f"{label}: truncated header length")
    (size,) = _LEN.unpack(size_raw)
    raw = fh.read(size)
    if len(raw) != size:
        raise FormatError(f"{label}: truncated header")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{label}: unreadable header: {exc}") from exc
    return header, fh.read()

"""Flat binary parameter checkpoints.

Layout: the 8 magic bytes ``3DPCT001`` followed by one record per entry::

    u32 name_len | name (utf-8) | u32 rank | u32 extent * rank | f64 * prod(extents)

All integers and floats are little-endian.  Batch-norm running statistics are
stored under names ending in ``.running_mean`` / ``.running_var``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError

MAGIC = b"3DPCT001"
BUFFER_SUFFIXES = (".running_mean", ".running_var")


def save_checkpoint(path, state: dict):
    chunks = [MAGIC]
    for name, arr in state.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise ParseError("bad checkpoint magic", path=path)
    out = {}
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise ParseError(f"truncated checkpoint at byte {pos}", path=path)
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        out[name] = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
    return out


def is_buffer(name: str) -> bool:
    return name.endswith(BUFFER_SUFFIXES)

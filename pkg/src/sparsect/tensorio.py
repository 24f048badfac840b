"""Shared little-endian tensor file format.

Layout: ``b"SCTT"`` magic, version byte, dtype tag byte (0 = float32,
1 = float64), rank byte, ``rank`` uint64 dimensions, raw payload.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SCTT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class TensorFormatError(ValueError):
    pass


def tensor_to_bytes(a) -> bytes:
    a = np.asarray(a)
    if a.dtype not in _TAGS:
        a = a.astype(np.float64)
    tag = _TAGS[a.dtype]
    head = MAGIC + struct.pack("<BBB", VERSION, tag, a.ndim)
    head += struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + np.ascontiguousarray(a, dtype=_DTYPES[tag]).tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor at ``offset``; returns the array and the end offset."""
    if buf[offset : offset + 4] != MAGIC:
        raise TensorFormatError("bad magic bytes")
    try:
        version, tag, rank = struct.unpack_from("<BBB", buf, offset + 4)
        shape = struct.unpack_from(f"<{rank}Q", buf, offset + 7)
    except struct.error:
        raise TensorFormatError("truncated header") from None
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    if tag not in _DTYPES:
        raise TensorFormatError(f"unknown dtype tag {tag}")
    pos = offset + 7 + 8 * rank
    dt = _DTYPES[tag]
    count = int(np.prod(shape, dtype=np.int64))
    end = pos + count * dt.itemsize
    if end > len(buf):
        raise TensorFormatError("truncated payload")
    arr = np.frombuffer(buf, dtype=dt, count=count, offset=pos).reshape(shape)
    return arr.astype(dt.newbyteorder("="), copy=True), end


def write_tensor(path: str | os.PathLike, a) -> None:
    Path(path).write_bytes(tensor_to_bytes(a))


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise TensorFormatError(f"{path}: trailing bytes after tensor payload")
    return arr

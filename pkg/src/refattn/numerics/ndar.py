"""NDAR binary tensor dumps.

Layout: magic ``b"NDAR"``, u32 rank, u32 dims[rank], then the payload as
float32 little-endian in row-major order.  All integers are little-endian.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"NDAR"


def dumps(array) -> bytes:
    arr = np.asarray(getattr(array, "data", array))
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def loads(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise ValueError(f"not an NDAR dump (magic {buf[:4]!r})")
    (rank,) = struct.unpack_from("<I", buf, 4)
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    start = 8 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    payload = np.frombuffer(buf, dtype="<f4", count=count, offset=start)
    if len(buf) != start + 4 * count:
        raise ValueError(f"NDAR payload size mismatch for dims {dims}")
    return payload.astype(np.float64).reshape(dims)


def save(path, array) -> None:
    Path(path).write_bytes(dumps(array))


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())

"""EMB1 binary embedding format (the wire/file contract shared with the
inference engine): 16-byte header {magic "EMB1", u32 N, u32 D, u32 dtype=1}
little-endian, then N*D float32 row-major."""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sIII")
_DTYPE_F32 = 1


def encode(data: np.ndarray) -> bytes:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected 2-d array, got shape {arr.shape}")
    n, d = arr.shape
    return _HEADER.pack(MAGIC, n, d, _DTYPE_F32) + arr.astype("<f4").tobytes(order="C")


def decode(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise ValueError(f"truncated header: {len(blob)} bytes")
    magic, n, d, dtype = _HEADER.unpack(blob[:_HEADER.size])
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if dtype != _DTYPE_F32:
        raise ValueError(f"unsupported dtype code {dtype}")
    payload = blob[_HEADER.size:]
    expected = n * d * 4
    if len(payload) != expected:
        raise ValueError(f"expected {expected} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float64)


def write(data: np.ndarray, path) -> None:
    with open(path, "wb") as f:
        f.write(encode(data))


def read(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode(f.read())

"""Reader and writer for the RMT tensor container.

Layout: the four bytes ``RMT1``, a little-endian u32 rank, ``rank`` u32
dims, then the row-major payload as little-endian float32. Booleans are
stored as 0.0/1.0.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"RMT1"


class RMTError(ValueError):
    """Raised for malformed or inconsistent RMT files."""


def encode_rmt(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.float32)
    payload = np.ascontiguousarray(arr, dtype="<f4")
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + payload.tobytes()


def decode_rmt(data: bytes, *, expect_shape: tuple[int, ...] | None = None) -> np.ndarray:
    if len(data) < 8 or data[:4] != MAGIC:
        raise RMTError("bad magic: not an RMT tensor")
    (rank,) = struct.unpack_from("<I", data, 4)
    head = 8 + 4 * rank
    if len(data) < head:
        raise RMTError("truncated RMT header")
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(data) - head != 4 * count:
        raise RMTError(
            f"dimension mismatch: header {dims} needs {4 * count} payload bytes, "
            f"found {len(data) - head}"
        )
    if expect_shape is not None and tuple(dims) != tuple(expect_shape):
        raise RMTError(f"dimension mismatch: expected {tuple(expect_shape)}, file has {dims}")
    arr = np.frombuffer(data, dtype="<f4", offset=head, count=count)
    return arr.reshape(dims).astype(np.float32)


def write_rmt(path: str | Path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_rmt(array))


def read_rmt(path: str | Path, *, expect_shape: tuple[int, ...] | None = None) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing RMT file: {path}")
    return decode_rmt(path.read_bytes(), expect_shape=expect_shape)

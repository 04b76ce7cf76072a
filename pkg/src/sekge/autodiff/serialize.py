"""Single-tensor binary files.

Layout (all little-endian)::

    magic     4 bytes  b"SEKT"
    dtype     uint64   1 = float32, 2 = float64, 3 = int64
    rank      uint64
    extents   rank x uint64
    payload   row-major values
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SEKT"
_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_KINDS = {np.dtype(v).str: k for k, v in _CODES.items()}


def dump_array(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = _KINDS.get(arr.dtype.newbyteorder("<").str)
    if code is None:
        raise TypeError(f"unsupported dtype {arr.dtype}")
    header = MAGIC + struct.pack("<QQ", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()


def load_array(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise ValueError("not a tensor file (bad magic)")
    code, rank = struct.unpack_from("<QQ", buf, 4)
    if code not in _CODES:
        raise ValueError(f"unknown dtype code {code}")
    offset = 20
    shape = struct.unpack_from(f"<{rank}Q", buf, offset)
    offset += 8 * rank
    dtype = _CODES[code]
    count = int(np.prod(shape)) if rank else 1
    if len(buf) - offset != count * dtype.itemsize:
        raise ValueError("tensor payload size does not match header")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def save_tensor(path, arr) -> None:
    Path(path).write_bytes(dump_array(arr))


def load_tensor(path) -> np.ndarray:
    return load_array(Path(path).read_bytes())

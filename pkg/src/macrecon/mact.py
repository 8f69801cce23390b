"""The MACT tensor container.

Layout (little-endian)::

    0..3   b"MACT"
    4      version (1)
    5      dtype code (1 = f32, 2 = f64)
    6..7   reserved, zero
    8..11  u32 ndim
    ...    ndim x u32 extents
    ...    row-major payload
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import FormatError

MAGIC = b"MACT"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def encode(array) -> bytes:
    arr = np.asarray(array)
    if arr.dtype == np.float32:
        dt = np.dtype("<f4")
    elif arr.dtype == np.float64 or np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
        dt = np.dtype("<f8")
    else:
        raise FormatError(f"MACT cannot store dtype {arr.dtype}")
    arr = np.asarray(arr, dtype=dt, order="C")
    header = MAGIC + struct.pack("<BBxxI", VERSION, _DTYPE_CODES[dt], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def read_from(stream: BinaryIO) -> np.ndarray:
    """Read one MACT tensor from ``stream``, leaving it positioned after the payload."""
    head = stream.read(12)
    if len(head) < 12:
        raise FormatError("truncated MACT header")
    if head[:4] != MAGIC:
        raise FormatError(f"bad MACT magic {head[:4]!r}")
    version, code, ndim = struct.unpack("<BBxxI", head[4:])
    if version != VERSION:
        raise FormatError(f"unsupported MACT version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown MACT dtype code {code}")
    raw = stream.read(4 * ndim)
    if len(raw) < 4 * ndim:
        raise FormatError("truncated MACT extents")
    shape = struct.unpack(f"<{ndim}I", raw)
    if any(n == 0 for n in shape):
        raise FormatError(f"MACT extents must be positive, got {shape}")
    dt = _CODE_DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    payload = stream.read(nbytes)
    if len(payload) < nbytes:
        raise FormatError(f"truncated MACT payload: expected {nbytes} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def decode(buf: bytes) -> np.ndarray:
    stream = io.BytesIO(buf)
    arr = read_from(stream)
    if stream.read(1):
        raise FormatError("trailing bytes after MACT payload")
    return arr


def save(path, array) -> None:
    Path(path).write_bytes(encode(array))


def load(path) -> np.ndarray:
    return decode(Path(path).read_bytes())

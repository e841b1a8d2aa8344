"""Dense 2D tensor persistence (TOMO format) and windowed PNG export.

Tensors are plain 2D numpy arrays of float32 or float64.  The TOMO layout is::

    b"TOMO" | u32 version=1 | u32 dtype (1=f32, 2=f64) | u32 rows | u32 cols | payload

with every integer little-endian and the payload row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    BadMagicError,
    TruncatedFileError,
    UnknownDtypeError,
    UnsupportedVersionError,
    ValidationError,
)

MAGIC = b"TOMO"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_OF = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def as_tensor(a, dtype=None) -> np.ndarray:
    """Validate and return ``a`` as a finite 2D float32/float64 array."""
    arr = np.asarray(a, dtype=dtype)
    if arr.dtype not in _CODE_OF:
        arr = arr.astype(np.float64 if dtype is None else dtype)
    if arr.ndim != 2:
        raise ValidationError(f"expected a 2D tensor, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("tensor contains NaN or Inf")
    return arr


def save_tensor(t, path) -> None:
    arr = np.asarray(t)
    if arr.dtype not in _CODE_OF:
        raise ValidationError(f"unsupported dtype {arr.dtype}; use float32 or float64")
    arr = as_tensor(arr)
    rows, cols = arr.shape
    header = _HEADER.pack(MAGIC, VERSION, _CODE_OF[arr.dtype], rows, cols)
    payload = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a TOMO file (magic {raw[:4]!r})")
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: header truncated")
    _, version, code, rows, cols = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported TOMO version {version}")
    if code not in _DTYPE_CODES:
        raise UnknownDtypeError(f"{path}: unknown dtype code {code}")
    dt = _DTYPE_CODES[code]
    expected = rows * cols * dt.itemsize
    payload = raw[_HEADER.size:]
    if len(payload) < expected:
        raise TruncatedFileError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=dt, count=rows * cols).reshape(rows, cols)
    return arr.astype(dt.newbyteorder("="))


@dataclass(frozen=True)
class WindowSpec:
    center: float
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise ValidationError(f"window width must be > 0, got {self.width}")


def window_to_uint8(t, w: WindowSpec) -> np.ndarray:
    arr = np.asarray(t, dtype=np.float64)
    lo = w.center - w.width / 2.0
    frac = np.clip((arr - lo) / w.width, 0.0, 1.0)
    # half-up rounding; np.round would round 127.5 to even
    return np.floor(frac * 255.0 + 0.5).astype(np.uint8)


def export_png(t, w: WindowSpec, path) -> None:
    Image.fromarray(window_to_uint8(as_tensor(t), w)).save(path, format="PNG")

"""CATN binary tensor container.

Layout (all integers little-endian):
    magic ``CATN`` | u32 version (1) | u32 tensor count
    per tensor: u32 name length | UTF-8 name | u8 rank | rank x u32 extents
                | u8 dtype tag (0 = f32, 1 = f64) | raw LE scalar payload

Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CATN"
VERSION = 1

_DTYPE_TAG = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_TAG_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CatnFormatError(ValueError):
    """Corrupt or unsupported container contents."""


def save_tensors(path, tensors: dict) -> None:
    """Write named arrays to ``path``. Values may be numpy arrays or
    anything with a ``.data`` ndarray attribute."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(getattr(value, "data", value))
        if arr.dtype not in _DTYPE_TAG:
            raise CatnFormatError(f"tensor '{name}': unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(struct.pack("<B", _DTYPE_TAG[arr.dtype]))
        chunks.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path) -> dict:
    """Read a container back into {name: ndarray}, bit-exactly."""
    buf = Path(path).read_bytes()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(buf):
            raise CatnFormatError(f"truncated container: {what} at offset {off}")
        piece = buf[off:off + n]
        off += n
        return piece

    if take(4, "magic") != MAGIC:
        raise CatnFormatError("bad magic at offset 0")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise CatnFormatError(f"unsupported version {version}")
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        name = take(nlen, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        extents = struct.unpack(f"<{rank}I", take(4 * rank, "extents"))
        (tag,) = struct.unpack("<B", take(1, "dtype tag"))
        if tag not in _TAG_DTYPE:
            raise CatnFormatError(f"tensor '{name}': unknown dtype tag {tag} at offset {off - 1}")
        dt = _TAG_DTYPE[tag]
        n = int(np.prod(extents)) if rank else 1
        raw = take(n * dt.itemsize, f"payload of '{name}'")
        out[name] = np.frombuffer(raw, dtype=dt).reshape(extents).astype(dt.newbyteorder("="), copy=True)
    if off != len(buf):
        raise CatnFormatError(f"trailing bytes at offset {off}")
    return out

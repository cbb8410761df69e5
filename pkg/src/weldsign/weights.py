"""Named tensor collection and its ``.wld`` binary format.

Layout (all integers little-endian)::

    b"WLDW"  u32 version=1  u32 count
    count x { u16 name_len, utf-8 name, u8 rank, rank x u32 dims, float32 LE data }
    u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from collections.abc import Mapping

import numpy as np

MAGIC = b"WLDW"
VERSION = 1


class WeightFormatError(ValueError):
    pass


class BadMagicError(WeightFormatError):
    pass


class UnsupportedVersionError(WeightFormatError):
    pass


class ChecksumError(WeightFormatError):
    pass


class TruncatedError(WeightFormatError):
    pass


class WeightStore(Mapping):
    """Insertion-ordered ``name -> float32 array`` mapping."""

    def __init__(self, tensors=None):
        self._t = {}
        for name, arr in (tensors or {}).items():
            self[name] = arr

    def __setitem__(self, name, arr):
        if not isinstance(name, str) or not name:
            raise ValueError("tensor names must be non-empty strings")
        if len(name.encode("utf-8")) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]}...")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        if arr.ndim > 255:
            raise ValueError(f"{name}: rank {arr.ndim} not representable")
        self._t[name] = arr

    def __getitem__(self, name):
        return self._t[name]

    def __iter__(self):
        return iter(self._t)

    def __len__(self):
        return len(self._t)

    def num_floats(self):
        return sum(a.size for a in self._t.values())

    def copy(self):
        return WeightStore({k: v.copy() for k, v in self._t.items()})


def save_weights(store: Mapping) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(store))]
    for name, arr in store.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def load_weights(data: bytes) -> WeightStore:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("not a weight file (bad magic)")
    if len(data) < 16:
        raise TruncatedError(f"weight file truncated at {len(data)} bytes")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise TruncatedError(f"weight file truncated: need {n} bytes at offset {pos}")
        chunk = body[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported weight file version {version}")
    # the checksum is verified before trusting any declared size
    if zlib.crc32(body) != crc:
        raise ChecksumError("weight file CRC-32 mismatch")
    store = WeightStore()
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
        if name in store:
            raise WeightFormatError(f"duplicate tensor name {name!r}")
        store[name] = arr
    if pos != len(body):
        raise WeightFormatError(f"{len(body) - pos} trailing bytes after last tensor")
    return store


def write_weights(path, store):
    with open(path, "wb") as f:
        f.write(save_weights(store))


def read_weights(path) -> WeightStore:
    with open(path, "rb") as f:
        return load_weights(f.read())

"""Dense float32 tensors in channels-last (H x W x C) layout.

A tensor here is simply a read-only ``numpy.ndarray`` of dtype float32 with
rank 1..4 and every dim >= 1. Element ``(h, w, c)`` of an ``H x W x C``
tensor lives at flat index ``(h * W + w) * C + c`` which is numpy's C order.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible for an operation."""


def as_tensor(data, shape: Sequence[int] | None = None) -> np.ndarray:
    """Build an immutable float32 tensor, optionally reshaping a flat buffer."""
    arr = np.array(data, dtype=np.float32, copy=True)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != arr.size:
            raise ShapeError(f"buffer of {arr.size} elements does not fit shape {shape}")
        arr = arr.reshape(shape)
    if not 1 <= arr.ndim <= 4:
        raise ShapeError(f"tensor rank must be 1..4, got {arr.ndim}")
    if any(d < 1 for d in arr.shape):
        raise ShapeError(f"all dims must be >= 1, got {arr.shape}")
    arr.flags.writeable = False
    return arr


def zeros(shape: Sequence[int]) -> np.ndarray:
    return as_tensor(np.zeros(tuple(shape), dtype=np.float32))


def flat_index(shape: Sequence[int], h: int, w: int, c: int) -> int:
    _, W, C = shape[-3:]
    return (h * W + w) * C + c


def elementwise_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"elementwise_add shape mismatch: {a.shape} vs {b.shape}")
    return np.add(a, b)


def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate along the trailing channel axis; spatial dims must agree."""
    if len(parts) == 0:
        raise ShapeError("concat_channels needs at least one part")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(
                f"concat_channels spatial mismatch: {parts[0].shape} vs {p.shape}")
    return np.concatenate(parts, axis=-1)


def channel_slice(t: np.ndarray, start: int, stop: int) -> np.ndarray:
    if not 0 <= start < stop <= t.shape[-1]:
        raise ShapeError(f"bad channel slice [{start}:{stop}] of {t.shape}")
    return t[..., start:stop].copy()

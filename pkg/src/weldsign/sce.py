"""Spatial and channel enhancement block.

A same-resolution max-pool pyramid (kernels 1, 5, 9, 13, concatenated in
that order) followed by squeeze-and-excitation style channel weights
computed from the concatenated map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import ShapeError, concat_channels

PYRAMID = (1, 5, 9, 13)
REDUCTION = 4


@dataclass(frozen=True)
class SceParams:
    w1: np.ndarray  # (C', C'/r)
    b1: np.ndarray | None
    w2: np.ndarray  # (C'/r, C')
    b2: np.ndarray | None
    pyramid: tuple = PYRAMID
    r: int = REDUCTION

    def __post_init__(self):
        c = self.w1.shape[0]
        if c % self.r:
            raise ShapeError(f"reduction ratio {self.r} does not divide {c} channels")
        if self.w1.shape != (c, c // self.r) or self.w2.shape != (c // self.r, c):
            raise ShapeError(f"bad excitation weight shapes {self.w1.shape}, {self.w2.shape}")
        if list(self.pyramid) != sorted(self.pyramid) or any(k % 2 == 0 for k in self.pyramid):
            raise ShapeError(f"pyramid kernels must be odd and ascending: {self.pyramid}")

    @property
    def channels(self):
        return self.w1.shape[0]


def same_padding(kernel):
    p = (kernel - 1) // 2
    return (p, p, p, p)


def spatial_integration(x, pyramid=PYRAMID):
    """Concatenate stride-1 same-size max pools of ``x`` in kernel order."""
    return concat_channels([ops.maxpool(x, k, 1, same_padding(k)) for k in pyramid])


def channel_weights(o, w1, b1, w2, b2):
    """Per-channel weights in (0, 1): avgpool -> fc -> relu -> fc -> sigmoid."""
    if o.shape[-1] != w1.shape[0]:
        raise ShapeError(f"channel weighting expects {w1.shape[0]} channels, got {o.shape[-1]}")
    z = ops.global_avgpool(o)
    lead = z.shape[:-1]
    zero1 = np.zeros(w1.shape[1], dtype=w1.dtype)
    zero2 = np.zeros(w2.shape[1], dtype=w2.dtype)
    flat = z.reshape(-1, w1.shape[0])
    hidden = ops.relu(ops.fully_connected(flat, w1, zero1 if b1 is None else b1))
    s = ops.sigmoid(ops.fully_connected(hidden, w2, zero2 if b2 is None else b2))
    return s.reshape(lead + (w2.shape[1],))


def sce_forward(x, p: SceParams, weighting=True):
    o = spatial_integration(x, p.pyramid)
    if o.shape[-1] != p.channels:
        raise ShapeError(
            f"SCE params expect {p.channels} pyramid channels, input gives {o.shape[-1]}")
    if not weighting:
        return o
    return o * channel_weights(o, p.w1, p.b1, p.w2, p.b2)


def sce_param_count(c_in, r=REDUCTION, pyramid_len=len(PYRAMID), bias=True):
    c = pyramid_len * c_in
    hidden = c // r
    return c * hidden + hidden * c + ((hidden + c) if bias else 0)

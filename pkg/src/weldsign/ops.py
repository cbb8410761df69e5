"""Forward and backward primitives over channels-last arrays.

Every op accepts a single image ``(H, W, C)`` or a batch ``(N, H, W, C)``
and keeps the input dtype, so the gradient checks can run in float64 while
inference stays in float32. Inputs are never modified.

Convolution kernels use the layout ``K x K x (C_in / g) x C_out``; output
channel ``c2`` belongs to group ``c2 // (C_out / g)`` and only sees input
channels of that same group.
"""

from __future__ import annotations

from math import gcd

import numpy as np

from . import _kernels
from .tensor import ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _batched(x):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected (H, W, C) or (N, H, W, C), got shape {x.shape}")


def _unbatch(y, squeeze):
    return y[0] if squeeze else y


def normalize_padding(padding):
    """Return ``(top, bottom, left, right)`` from an int or a 4-tuple."""
    if np.isscalar(padding):
        p = int(padding)
        return (p, p, p, p)
    t, b, l, r = (int(v) for v in padding)
    return (t, b, l, r)


def out_size(size, kernel, stride, pad_lo, pad_hi):
    return (size + pad_lo + pad_hi - kernel) // stride + 1


def group_count(c_in, c_out):
    """Grouping used throughout GRNet: gcd of the channel counts."""
    return gcd(c_in, c_out)


def conv_param_count(kernel, c_in, c_out, groups=1, bias=False):
    return kernel * kernel * (c_in // groups) * c_out + (c_out if bias else 0)


def _pad(x, pad, value=0.0):
    t, b, l, r = pad
    if not any(pad):
        return x
    return np.pad(x, ((0, 0), (t, b), (l, r), (0, 0)), constant_values=value)


def _window(xp, i, j, stride, ho, wo):
    return xp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]


def _check_conv(x, weight, groups):
    if weight.ndim != 4 or weight.shape[0] != weight.shape[1]:
        raise ShapeError(f"kernel must be K x K x C_in/g x C_out, got {weight.shape}")
    c_in = x.shape[-1]
    c_out = weight.shape[3]
    if groups < 1 or c_in % groups or c_out % groups:
        raise ShapeError(f"groups={groups} must divide C_in={c_in} and C_out={c_out}")
    if weight.shape[2] * groups != c_in:
        raise ShapeError(
            f"input has {c_in} channels but kernel expects {weight.shape[2]} x {groups}")


def conv2d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """Grouped 2-D convolution (cross-correlation) with explicit padding."""
    xb, squeeze = _batched(x)
    _check_conv(xb, weight, groups)
    pad = normalize_padding(padding)
    k = weight.shape[0]
    n, h, w, c_in = xb.shape
    c_out = weight.shape[3]
    ho = out_size(h, k, stride, pad[0], pad[1])
    wo = out_size(w, k, stride, pad[2], pad[3])
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv output would be empty for input {x.shape}, kernel {k}")
    xp = _pad(xb, pad)
    dtype = np.result_type(x.dtype, weight.dtype)

    if groups == 1:
        out = np.zeros((n * ho * wo, c_out), dtype=dtype)
        for i in range(k):
            for j in range(k):
                xs = _window(xp, i, j, stride, ho, wo).reshape(-1, c_in)
                out += xs @ weight[i, j]
        out = out.reshape(n, ho, wo, c_out)
    elif c_in == groups:
        # one input channel per group: repeat it so every output is depthwise
        xr = np.repeat(xp, c_out // groups, axis=-1) if c_out > c_in else xp
        out = np.zeros((n, ho, wo, c_out), dtype=dtype)
        _kernels.dwconv_forward(np.ascontiguousarray(xr, dtype=dtype),
                                np.ascontiguousarray(weight[:, :, 0, :], dtype=dtype), stride, out)
    else:
        out = np.zeros((n, ho, wo, c_out), dtype=dtype)
        _kernels.gconv_forward(np.ascontiguousarray(xp, dtype=dtype),
                               np.ascontiguousarray(weight, dtype=dtype), stride, groups, out)
    if bias is not None:
        out += bias
    return _unbatch(out, squeeze)


def conv2d_backward(dout, x, weight, stride=1, padding=0, groups=1, bias=True):
    """Gradients of :func:`conv2d` w.r.t. input, kernel and (optionally) bias."""
    xb, squeeze = _batched(x)
    db_out, _ = _batched(dout)
    pad = normalize_padding(padding)
    k = weight.shape[0]
    n, h, w, c_in = xb.shape
    _, ho, wo, c_out = db_out.shape
    xp = _pad(xb, pad)
    dxp = np.zeros_like(xp, dtype=np.result_type(dout.dtype, x.dtype))
    dw = np.zeros_like(weight, dtype=dxp.dtype)

    if groups == 1:
        g2 = db_out.reshape(-1, c_out)
        for i in range(k):
            for j in range(k):
                xs = _window(xp, i, j, stride, ho, wo).reshape(-1, c_in)
                dw[i, j] = xs.T @ g2
                _window(dxp, i, j, stride, ho, wo)[...] += (g2 @ weight[i, j].T).reshape(n, ho, wo, c_in)
    elif c_in == groups:
        dt = dxp.dtype
        cog = c_out // groups
        xr = np.repeat(xp, cog, axis=-1) if cog > 1 else xp
        dxr = np.zeros(xr.shape, dtype=dt)
        dw2 = np.zeros((k, k, c_out), dtype=dt)
        _kernels.dwconv_backward(np.ascontiguousarray(xr, dtype=dt),
                                 np.ascontiguousarray(weight[:, :, 0, :], dtype=dt),
                                 np.ascontiguousarray(db_out, dtype=dt), stride, dxr, dw2)
        dw[:, :, 0, :] = dw2
        dxp = dxr.reshape(*dxr.shape[:3], c_in, cog).sum(axis=-1) if cog > 1 else dxr
    else:
        dt = dxp.dtype
        _kernels.gconv_backward(np.ascontiguousarray(xp, dtype=dt),
                                np.ascontiguousarray(weight, dtype=dt),
                                np.ascontiguousarray(db_out, dtype=dt), stride, groups, dxp, dw)
    t, b, l, r = pad
    dx = dxp[:, t:t + h, l:l + w, :]
    db = db_out.sum(axis=(0, 1, 2)) if bias else None
    return _unbatch(np.ascontiguousarray(dx), squeeze), dw, db


def batchnorm_infer(x, gamma, beta, mean, var, eps=BN_EPS):
    c = x.shape[-1]
    for name, v in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        if v.shape != (c,):
            raise ShapeError(f"batchnorm {name} has shape {v.shape}, input has {c} channels")
    scale = gamma / np.sqrt(var + eps)
    return (x - mean) * scale + beta


def batchnorm_train_forward(x, gamma, beta, eps=BN_EPS):
    """Normalize with batch statistics.

    Returns ``(out, cache, batch_mean, batch_var)`` where ``batch_var`` is the
    biased variance used for normalization.
    """
    c = x.shape[-1]
    x2 = np.ascontiguousarray(x).reshape(-1, c)
    out = np.empty_like(x2)
    xhat = np.empty_like(x2)
    mean, var, inv_std = _kernels.bn_train_forward(x2, gamma.astype(np.float64),
                                                   beta.astype(np.float64), eps, out, xhat)
    return (out.reshape(x.shape), (xhat.reshape(x.shape), inv_std, gamma),
            mean.astype(x.dtype), var.astype(x.dtype))


def batchnorm_train_backward(dout, cache):
    xhat, inv_std, gamma = cache
    c = dout.shape[-1]
    d2 = np.ascontiguousarray(dout).reshape(-1, c)
    dx = np.empty_like(d2)
    dgamma, dbeta = _kernels.bn_train_backward(d2, xhat.reshape(-1, c),
                                               gamma.astype(np.float64), inv_std, dx)
    return dx.reshape(dout.shape), dgamma.astype(dout.dtype), dbeta.astype(dout.dtype)


def update_running_stats(running_mean, running_var, batch_mean, batch_var, count,
                         momentum=BN_MOMENTUM):
    unbiased = batch_var * (count / max(count - 1, 1))
    new_mean = (1 - momentum) * running_mean + momentum * batch_mean
    new_var = (1 - momentum) * running_var + momentum * unbiased
    return new_mean.astype(running_mean.dtype), new_var.astype(running_var.dtype)


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dout, x):
    d = np.ascontiguousarray(dout)
    dx = np.empty_like(d)
    _kernels.relu_backward(d.reshape(-1), np.ascontiguousarray(x).reshape(-1), dx.reshape(-1))
    return dx


def _pool_max(xp, k, stride, ho, wo):
    # max is separable: reduce window columns first, then rows
    cols = xp[:, :, 0:stride * (wo - 1) + 1:stride, :].copy()
    for j in range(1, k):
        np.maximum(cols, xp[:, :, j:j + stride * (wo - 1) + 1:stride, :], out=cols)
    out = cols[:, 0:stride * (ho - 1) + 1:stride].copy()
    for i in range(1, k):
        np.maximum(out, cols[:, i:i + stride * (ho - 1) + 1:stride], out=out)
    return out


def maxpool(x, kernel, stride, padding=0):
    """Max pooling; padded cells hold -inf so they never win."""
    xb, squeeze = _batched(x)
    pad = normalize_padding(padding)
    n, h, w, c = xb.shape
    ho = out_size(h, kernel, stride, pad[0], pad[1])
    wo = out_size(w, kernel, stride, pad[2], pad[3])
    if ho < 1 or wo < 1:
        raise ShapeError(f"maxpool output would be empty for input {x.shape}, kernel {kernel}")
    if kernel == 1 and stride == 1 and not any(pad):
        return x.copy()
    xp = _pad(xb, pad, value=-np.inf)
    return _unbatch(_pool_max(xp, kernel, stride, ho, wo), squeeze)


def maxpool_backward(dout, x, kernel, stride, padding=0):
    """Route each output gradient to the first maximal cell of its window."""
    xb, squeeze = _batched(x)
    gb, _ = _batched(dout)
    pad = normalize_padding(padding)
    n, h, w, c = xb.shape
    ho, wo = gb.shape[1:3]
    xp = _pad(xb, pad, value=-np.inf)
    out = _pool_max(xp, kernel, stride, ho, wo)
    dxp = np.zeros(xp.shape, dtype=dout.dtype)
    claimed = np.zeros(out.shape, dtype=bool)
    for i in range(kernel):
        for j in range(kernel):
            win = _window(xp, i, j, stride, ho, wo)
            hit = (win == out) & ~claimed
            claimed |= hit
            _window(dxp, i, j, stride, ho, wo)[...] += np.where(hit, gb, 0)
    t, b, l, r = pad
    dx = dxp[:, t:t + h, l:l + w, :]
    return _unbatch(np.ascontiguousarray(dx), squeeze)


def global_avgpool(x):
    """Per-channel spatial mean; returns ``1 x 1 x C`` (or ``N x 1 x 1 x C``)."""
    return x.mean(axis=(-3, -2), keepdims=True, dtype=np.float64).astype(x.dtype)


def global_avgpool_backward(dout, input_shape):
    h, w = input_shape[-3], input_shape[-2]
    return np.broadcast_to(dout / (h * w), input_shape).astype(dout.dtype)


def fully_connected(x, weights, bias):
    """``out_j = sum_i x_i W_ij + b_j``.

    ``(N,)`` and ``1 x 1 x N`` inputs give a length-M vector; ``(B, N)`` and
    ``(B, 1, 1, N)`` give ``(B, M)``.
    """
    n_in, n_out = weights.shape
    batched = x.ndim in (2, 4)
    if x.size % n_in or (not batched and x.size != n_in):
        raise ShapeError(f"fully_connected expects {n_in} inputs, got shape {x.shape}")
    if bias.shape != (n_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match {n_out} outputs")
    out = x.reshape(-1, n_in) @ weights + bias
    return out if batched else out[0]


def fully_connected_backward(dout, x, weights):
    n_in = weights.shape[0]
    flat = x.reshape(-1, n_in)
    g = dout.reshape(-1, weights.shape[1])
    dx = (g @ weights.T).reshape(x.shape)
    return dx, flat.T @ g, g.sum(axis=0)


def softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x):
    """Logistic function, kept strictly inside (0, 1) even after rounding."""
    x = np.asarray(x)
    dt = x.dtype if np.issubdtype(x.dtype, np.floating) else np.dtype(np.float64)
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(dt)
    return np.clip(y, np.finfo(dt).tiny, np.nextafter(dt.type(1), dt.type(0)))


def upsample_nearest_2x(x):
    return np.repeat(np.repeat(x, 2, axis=-3), 2, axis=-2)


def add_backward(dout):
    return dout, dout

"""Compiled loops for grouped convolution (the GRNet hot path).

Dense convolutions go through BLAS in :mod:`weldsign.ops`; grouped ones
with few channels per group are loop-bound and live here. Callers must pass
C-contiguous arrays so numba specializes on the fast layout.
"""

import numba
import numpy as np


@numba.njit(cache=True, fastmath=True)
def gconv_forward(xp, w, stride, groups, out):
    n_img, ho_n, wo_n, c_out = out.shape
    k = w.shape[0]
    cig = w.shape[2]
    cog = c_out // groups
    for n in range(n_img):
        for ho in range(ho_n):
            for i in range(k):
                hi = ho * stride + i
                for j in range(k):
                    for wo in range(wo_n):
                        wi = wo * stride + j
                        if cig == 1 and cog == 1:
                            for c in range(c_out):
                                out[n, ho, wo, c] += xp[n, hi, wi, c] * w[i, j, 0, c]
                        elif cig == 1:
                            for g in range(groups):
                                xv = xp[n, hi, wi, g]
                                for m in range(cog):
                                    out[n, ho, wo, g * cog + m] += xv * w[i, j, 0, g * cog + m]
                        else:
                            for g in range(groups):
                                for m in range(cog):
                                    co = g * cog + m
                                    acc = out[n, ho, wo, co]
                                    for ci in range(cig):
                                        acc += xp[n, hi, wi, g * cig + ci] * w[i, j, ci, co]
                                    out[n, ho, wo, co] = acc


@numba.njit(cache=True, fastmath=True)
def gconv_backward(xp, w, dout, stride, groups, dxp, dw):
    n_img, ho_n, wo_n, c_out = dout.shape
    k = w.shape[0]
    cig = w.shape[2]
    cog = c_out // groups
    for n in range(n_img):
        for ho in range(ho_n):
            for i in range(k):
                hi = ho * stride + i
                for j in range(k):
                    for wo in range(wo_n):
                        wi = wo * stride + j
                        if cig == 1 and cog == 1:
                            for c in range(c_out):
                                gv = dout[n, ho, wo, c]
                                dxp[n, hi, wi, c] += gv * w[i, j, 0, c]
                                dw[i, j, 0, c] += gv * xp[n, hi, wi, c]
                        elif cig == 1:
                            for g in range(groups):
                                xv = xp[n, hi, wi, g]
                                acc = dxp.dtype.type(0)
                                for m in range(cog):
                                    gv = dout[n, ho, wo, g * cog + m]
                                    acc += gv * w[i, j, 0, g * cog + m]
                                    dw[i, j, 0, g * cog + m] += gv * xv
                                dxp[n, hi, wi, g] += acc
                        else:
                            for g in range(groups):
                                for m in range(cog):
                                    co = g * cog + m
                                    gv = dout[n, ho, wo, co]
                                    for ci in range(cig):
                                        dxp[n, hi, wi, g * cig + ci] += gv * w[i, j, ci, co]
                                        dw[i, j, ci, co] += gv * xp[n, hi, wi, g * cig + ci]


@numba.njit(cache=True)
def bn_train_forward(x, gamma, beta, eps, out, xhat):
    # x, out, xhat are (M, C); statistics accumulate in float64
    m, c = x.shape
    mean = np.zeros(c)
    sq = np.zeros(c)
    for r in range(m):
        for k in range(c):
            mean[k] += x[r, k]
    mean /= m
    for r in range(m):
        for k in range(c):
            d = x[r, k] - mean[k]
            sq[k] += d * d
    var = sq / m
    inv_std = 1.0 / np.sqrt(var + eps)
    for r in range(m):
        for k in range(c):
            h = (x[r, k] - mean[k]) * inv_std[k]
            xhat[r, k] = h
            out[r, k] = h * gamma[k] + beta[k]
    return mean, var, inv_std


@numba.njit(cache=True)
def bn_train_backward(dout, xhat, gamma, inv_std, dx):
    m, c = dout.shape
    dbeta = np.zeros(c)
    dgamma = np.zeros(c)
    for r in range(m):
        for k in range(c):
            dbeta[k] += dout[r, k]
            dgamma[k] += dout[r, k] * xhat[r, k]
    scale = gamma * inv_std / m
    for r in range(m):
        for k in range(c):
            dx[r, k] = scale[k] * (m * dout[r, k] - dbeta[k] - xhat[r, k] * dgamma[k])
    return dgamma, dbeta


@numba.njit(cache=True)
def relu_backward(dout, x, dx):
    for r in range(dout.shape[0]):
        dx[r] = dout[r] if x[r] > 0 else 0.0


@numba.njit(cache=True, fastmath=True)
def dwconv_forward(xp, w, stride, out):
    # depthwise: w is (K, K, C); stride-1 rows are contiguous runs of wo*C
    n_img, ho_n, wo_n, c = out.shape
    k = w.shape[0]
    run = wo_n * c
    wt = np.empty((k, k, run), dtype=w.dtype)
    for i in range(k):
        for j in range(k):
            for t in range(run):
                wt[i, j, t] = w[i, j, t % c]
    for n in range(n_img):
        for ho in range(ho_n):
            orow = out[n, ho].reshape(run)
            for i in range(k):
                xrow_full = xp[n, ho * stride + i]
                for j in range(k):
                    wrow = wt[i, j]
                    if stride == 1:
                        xrow = xrow_full[j:j + wo_n].reshape(run)
                        for t in range(run):
                            orow[t] += xrow[t] * wrow[t]
                    else:
                        for wo in range(wo_n):
                            wi = wo * stride + j
                            for ch in range(c):
                                orow[wo * c + ch] += xrow_full[wi, ch] * wrow[ch]


@numba.njit(cache=True, fastmath=True)
def dwconv_backward(xp, w, dout, stride, dxp, dw):
    n_img, ho_n, wo_n, c = dout.shape
    k = w.shape[0]
    run = wo_n * c
    wt = np.empty((k, k, run), dtype=w.dtype)
    for i in range(k):
        for j in range(k):
            for t in range(run):
                wt[i, j, t] = w[i, j, t % c]
    acc = np.zeros((k, k, run), dtype=dw.dtype)
    for n in range(n_img):
        for ho in range(ho_n):
            drow = dout[n, ho].reshape(run)
            for i in range(k):
                hi = ho * stride + i
                for j in range(k):
                    wrow = wt[i, j]
                    arow = acc[i, j]
                    if stride == 1:
                        xrow = xp[n, hi, j:j + wo_n].reshape(run)
                        dxrow = dxp[n, hi, j:j + wo_n].reshape(run)
                        for t in range(run):
                            dxrow[t] += drow[t] * wrow[t]
                            arow[t] += drow[t] * xrow[t]
                    else:
                        for wo in range(wo_n):
                            wi = wo * stride + j
                            for ch in range(c):
                                g = drow[wo * c + ch]
                                dxp[n, hi, wi, ch] += g * wrow[ch]
                                arow[wo * c + ch] += g * xp[n, hi, wi, ch]
    for i in range(k):
        for j in range(k):
            for t in range(run):
                dw[i, j, t % c] += acc[i, j, t]

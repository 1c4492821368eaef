"""Pure-numpy convolution kernels (im2col + BLAS matmul).

Fallback backend used when the compiled extension is unavailable.
All convolutions are stride 1 with zero "same" padding and odd kernels.
"""
from __future__ import annotations

import numpy as np

BACKEND = "python"


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    n, c, h, w = x.shape
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k, k, h, w), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, :, di, dj] = xp[:, :, di : di + h, dj : dj + w]
    return cols.reshape(n, c * k * k, h * w)


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Batched 2-d convolution: (N,C,H,W) x (O,C,k,k) -> (N,O,H,W)."""
    n, c, h, w = x.shape
    out_ch, in_ch, k, _ = weights.shape
    cols = _im2col(x, k)
    wmat = weights.reshape(out_ch, in_ch * k * k)
    y = np.matmul(wmat, cols).reshape(n, out_ch, h, w)
    return y + bias.reshape(1, -1, 1, 1)


def conv2d_backward(x: np.ndarray, weights: np.ndarray, dy: np.ndarray):
    """Gradients of conv2d_forward: returns (dx, dweights, dbias)."""
    n, c, h, w = x.shape
    out_ch, in_ch, k, _ = weights.shape
    pad = (k - 1) // 2
    cols = _im2col(x, k)
    dym = dy.reshape(n, out_ch, h * w)
    dw = np.einsum("noq,ncq->oc", dym, cols).reshape(weights.shape)
    db = dym.sum(axis=(0, 2))
    wmat = weights.reshape(out_ch, in_ch * k * k)
    dcols = np.matmul(wmat.T, dym).reshape(n, c, k, k, h, w)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            dxp[:, :, di : di + h, dj : dj + w] += dcols[:, :, di, dj]
    dx = dxp[:, :, pad : pad + h, pad : pad + w]
    return dx, dw, db

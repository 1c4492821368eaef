# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled 2-d convolution kernels.

Stride 1, zero "same" padding, odd kernels; this is the hot path of the
contrastive encoder.  Arrays are transposed to a batch-last layout so the
inner loops run over long contiguous spans (width x batch) that the C
compiler can vectorize; the padded buffer removes boundary branches.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"


cdef void _forward(double[:, :, :, ::1] xt, double[:, :, :, ::1] w,
                   double[::1] b, double[:, :, :, ::1] yt,
                   Py_ssize_t[::1] base) noexcept nogil:
    # xt: (C, H+2p, W+2p, N) zero-padded, yt: (O, H, W, N).  base holds the
    # flat xt offset of each (ci, di, dj) tap at output row 0; row i adds
    # i * Wp * N.  Taps are processed four at a time so each output row is
    # read and written once per four coefficients instead of once per tap.
    cdef Py_ssize_t C = xt.shape[0], N = xt.shape[3]
    cdef Py_ssize_t O = yt.shape[0], H = yt.shape[1], W = yt.shape[2]
    cdef Py_ssize_t rowstride = xt.shape[2] * N
    cdef Py_ssize_t M = base.shape[0]
    cdef Py_ssize_t o, i, t, m, span = W * N, plane = H * span
    cdef double c0, c1, c2, c3
    cdef double *py
    cdef const double *x0 = &xt[0, 0, 0, 0]
    cdef const double *p0
    cdef const double *p1
    cdef const double *p2
    cdef const double *p3
    cdef const double *wo
    for o in range(O):
        py = &yt[o, 0, 0, 0]
        c0 = b[o]
        for t in range(plane):
            py[t] = c0
        wo = &w[o, 0, 0, 0]
        for i in range(H):
            py = &yt[o, i, 0, 0]
            m = 0
            while m + 4 <= M:
                c0 = wo[m]
                c1 = wo[m + 1]
                c2 = wo[m + 2]
                c3 = wo[m + 3]
                p0 = x0 + base[m] + i * rowstride
                p1 = x0 + base[m + 1] + i * rowstride
                p2 = x0 + base[m + 2] + i * rowstride
                p3 = x0 + base[m + 3] + i * rowstride
                for t in range(span):
                    py[t] += c0 * p0[t] + c1 * p1[t] + c2 * p2[t] + c3 * p3[t]
                m += 4
            while m < M:
                c0 = wo[m]
                p0 = x0 + base[m] + i * rowstride
                for t in range(span):
                    py[t] += c0 * p0[t]
                m += 1


cdef void _backward(double[:, :, :, ::1] xt, double[:, :, :, ::1] w,
                    double[:, :, :, ::1] dyt, double[:, :, :, ::1] dxt,
                    double[:, :, :, ::1] dw, double[::1] db) noexcept nogil:
    # xt/dxt: (C, H+2p, W+2p, N), dyt: (O, H, W, N)
    cdef Py_ssize_t C = xt.shape[0], N = xt.shape[3]
    cdef Py_ssize_t O = dyt.shape[0], H = dyt.shape[1], W = dyt.shape[2]
    cdef Py_ssize_t K = w.shape[2]
    cdef Py_ssize_t o, ci, di, dj, i, t, span = W * N, plane = H * span
    cdef double coef, acc, g
    cdef const double *py
    cdef const double *px
    cdef double *pdx
    for o in range(O):
        py = &dyt[o, 0, 0, 0]
        acc = 0.0
        for t in range(plane):
            acc += py[t]
        db[o] += acc
        for ci in range(C):
            for di in range(K):
                for dj in range(K):
                    coef = w[o, ci, di, dj]
                    acc = 0.0
                    for i in range(H):
                        py = &dyt[o, i, 0, 0]
                        px = &xt[ci, i + di, dj, 0]
                        pdx = &dxt[ci, i + di, dj, 0]
                        for t in range(span):
                            g = py[t]
                            acc += g * px[t]
                            pdx[t] += coef * g
                    dw[o, ci, di, dj] += acc


def _pad_batch_last(x, Py_ssize_t pad):
    # (N, C, H, W) -> zero-padded (C, H+2p, W+2p, N), C-contiguous
    cdef Py_ssize_t H = x.shape[2], W = x.shape[3]
    xt = np.zeros((x.shape[1], H + 2 * pad, W + 2 * pad, x.shape[0]))
    xt[:, pad : pad + H, pad : pad + W, :] = np.moveaxis(x, 0, -1)
    return xt


def _tap_offsets(Py_ssize_t C, Py_ssize_t K, Py_ssize_t Hp, Py_ssize_t Wp,
                 Py_ssize_t N):
    # flat xt offsets of every (ci, di, dj) tap at output row 0
    ci, di, dj = np.meshgrid(np.arange(C), np.arange(K), np.arange(K),
                             indexing="ij")
    return np.ascontiguousarray(
        ((ci * Hp + di) * Wp + dj).ravel() * N, dtype=np.intp
    )


def conv2d_forward(x, weights, bias):
    """Batched 2-d convolution: (N,C,H,W) x (O,C,k,k) -> (N,O,H,W)."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    bias = np.ascontiguousarray(bias, dtype=np.float64)
    cdef Py_ssize_t pad = (weights.shape[2] - 1) // 2
    xt = _pad_batch_last(x, pad)
    base = _tap_offsets(weights.shape[1], weights.shape[2], xt.shape[1],
                        xt.shape[2], xt.shape[3])
    yt = np.empty((weights.shape[0], x.shape[2], x.shape[3], x.shape[0]))
    _forward(xt, weights, bias, yt, base)
    return np.ascontiguousarray(np.moveaxis(yt, -1, 0))


def conv2d_backward(x, weights, dy):
    """Gradients of conv2d_forward: returns (dx, dweights, dbias)."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    cdef Py_ssize_t pad = (weights.shape[2] - 1) // 2
    cdef Py_ssize_t H = x.shape[2], W = x.shape[3]
    xt = _pad_batch_last(x, pad)
    dyt = np.ascontiguousarray(np.moveaxis(dy, 0, -1))
    dxt = np.zeros_like(xt)
    dw = np.zeros_like(weights)
    db = np.zeros(weights.shape[0])
    _backward(xt, weights, dyt, dxt, dw, db)
    dx = np.ascontiguousarray(
        np.moveaxis(dxt[:, pad : pad + H, pad : pad + W, :], -1, 0)
    )
    return dx, dw, db

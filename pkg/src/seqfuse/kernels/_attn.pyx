# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled pointwise-attention kernel; fused loops over the (t, s) plane.

Must compute exactly the same quantities as kernels/numpy_ref.py (up to
floating-point summation order). Only the causal, in-length region of the
score matrix is touched; everything else stays zero.
"""

from libc.math cimport exp, sqrt

import numpy as np

cimport cython
cimport numpy as cnp

ctypedef fused real:
    float
    double

NAME = "cython"


def pointwise_attn_forward(real[:, :, :, ::1] q, real[:, :, :, ::1] k,
                           real[:, :, :, ::1] v, real[:, :, ::1] bias,
                           long[::1] lens):
    cdef Py_ssize_t B = q.shape[0], H = q.shape[1], T = q.shape[2], D = q.shape[3]
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((B, H, T, D), dtype=dtype)
    scores_arr = np.zeros((B, H, T, T), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef real[:, :, :, ::1] scores = scores_arr
    cdef Py_ssize_t b, h, t, s, d, L
    cdef real acc, x, sig, p, invn
    cdef real scale = <real>(1.0 / sqrt(<double>D))
    with nogil:
        for b in range(B):
            L = lens[b]
            if L > T:
                L = T
            invn = <real>(1.0) / <real>L
            for h in range(H):
                for t in range(L):
                    for s in range(t + 1):
                        acc = 0
                        for d in range(D):
                            acc += q[b, h, t, d] * k[b, h, s, d]
                        x = acc * scale + bias[h, t, s]
                        scores[b, h, t, s] = x
                        sig = <real>(1.0) / (<real>(1.0) + <real>exp(-x))
                        p = x * sig * invn
                        for d in range(D):
                            out[b, h, t, d] += p * v[b, h, s, d]
    return out_arr, scores_arr


def pointwise_attn_backward(real[:, :, :, ::1] d_out, real[:, :, :, ::1] q,
                            real[:, :, :, ::1] k, real[:, :, :, ::1] v,
                            real[:, :, :, ::1] scores, long[::1] lens):
    cdef Py_ssize_t B = q.shape[0], H = q.shape[1], T = q.shape[2], D = q.shape[3]
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    dq_arr = np.zeros((B, H, T, D), dtype=dtype)
    dk_arr = np.zeros((B, H, T, D), dtype=dtype)
    dv_arr = np.zeros((B, H, T, D), dtype=dtype)
    dbias_arr = np.zeros((H, T, T), dtype=dtype)
    cdef real[:, :, :, ::1] dq = dq_arr
    cdef real[:, :, :, ::1] dk = dk_arr
    cdef real[:, :, :, ::1] dv = dv_arr
    cdef real[:, :, ::1] dbias = dbias_arr
    cdef Py_ssize_t b, h, t, s, d, L
    cdef real x, sig, p, dp, ds, invn
    cdef real scale = <real>(1.0 / sqrt(<double>D))
    with nogil:
        for b in range(B):
            L = lens[b]
            if L > T:
                L = T
            invn = <real>(1.0) / <real>L
            for h in range(H):
                for t in range(L):
                    for s in range(t + 1):
                        x = scores[b, h, t, s]
                        sig = <real>(1.0) / (<real>(1.0) + <real>exp(-x))
                        p = x * sig * invn
                        dp = 0
                        for d in range(D):
                            dp += d_out[b, h, t, d] * v[b, h, s, d]
                            dv[b, h, s, d] += p * d_out[b, h, t, d]
                        # d silu(x) = sig * (1 + x * (1 - sig))
                        ds = dp * invn * sig * (<real>(1.0) + x * (<real>(1.0) - sig))
                        dbias[h, t, s] += ds
                        for d in range(D):
                            dq[b, h, t, d] += ds * k[b, h, s, d] * scale
                            dk[b, h, s, d] += ds * q[b, h, t, d] * scale
    return dq_arr, dk_arr, dv_arr, dbias_arr

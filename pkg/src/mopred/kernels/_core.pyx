# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: masked softmax, scatter-add, masked max-pool.

Contracts match ``numpy_backend``; selected at import by the package
``kernels`` namespace.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, INFINITY

cnp.import_array()

NAME = "compiled"


def masked_softmax_fwd(double[:, ::1] scores, unsigned char[:, ::1] mask):
    cdef Py_ssize_t m = scores.shape[0], k = scores.shape[1]
    out_arr = np.zeros((m, k))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double mx, z, e
    for i in range(m):
        mx = -INFINITY
        for j in range(k):
            if mask[i, j] and scores[i, j] > mx:
                mx = scores[i, j]
        if mx == -INFINITY:
            continue
        z = 0.0
        for j in range(k):
            if mask[i, j]:
                e = exp(scores[i, j] - mx)
                out[i, j] = e
                z += e
        for j in range(k):
            if mask[i, j]:
                out[i, j] /= z
    return out_arr


def masked_softmax_bwd(double[:, ::1] probs, double[:, ::1] grad_out):
    cdef Py_ssize_t m = probs.shape[0], k = probs.shape[1]
    out_arr = np.zeros((m, k))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(m):
        dot = 0.0
        for j in range(k):
            dot += probs[i, j] * grad_out[i, j]
        for j in range(k):
            out[i, j] = probs[i, j] * (grad_out[i, j] - dot)
    return out_arr


def scatter_add_rows(double[:, ::1] out, long long[::1] idx, double[:, ::1] src):
    cdef Py_ssize_t r = src.shape[0], d = src.shape[1]
    cdef Py_ssize_t i, j
    cdef long long t
    for i in range(r):
        t = idx[i]
        for j in range(d):
            out[t, j] += src[i, j]
    return np.asarray(out)


def masked_max_pool_fwd(double[:, :, ::1] x, unsigned char[:, ::1] mask):
    cdef Py_ssize_t g = x.shape[0], n = x.shape[1], d = x.shape[2]
    out_arr = np.zeros((g, d))
    arg_arr = np.zeros((g, d), dtype=np.int64)
    valid_arr = np.zeros(g, dtype=np.uint8)
    cdef double[:, ::1] out = out_arr
    cdef long long[:, ::1] arg = arg_arr
    cdef unsigned char[::1] valid = valid_arr
    cdef Py_ssize_t i, j, c
    cdef double v
    cdef bint first
    for i in range(g):
        first = True
        for j in range(n):
            if not mask[i, j]:
                continue
            valid[i] = 1
            for c in range(d):
                v = x[i, j, c]
                if first or v > out[i, c]:
                    out[i, c] = v
                    arg[i, c] = j
            first = False
    return out_arr, arg_arr, valid_arr


def masked_max_pool_bwd(double[:, ::1] grad_out, long long[:, ::1] argmax,
                        unsigned char[::1] any_valid, Py_ssize_t n):
    cdef Py_ssize_t g = grad_out.shape[0], d = grad_out.shape[1]
    out_arr = np.zeros((g, n, d))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, c
    for i in range(g):
        if not any_valid[i]:
            continue
        for c in range(d):
            out[i, argmax[i, c], c] += grad_out[i, c]
    return out_arr

# cython: language_level=3
# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled count-recursion kernels (see _fallback.py for the reference)."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def count_tail_dp(object w0_in, object w1_in, int kmax):
    """Per-row sums of products over binary vectors with a fixed number of ones."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] w0 = np.ascontiguousarray(w0_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] w1 = np.ascontiguousarray(w1_in, dtype=np.float64)
    if w0.shape[0] != w1.shape[0] or w0.shape[1] != w1.shape[1]:
        raise ValueError("w0 and w1 must be matching (n, m) matrices")
    if kmax < 1:
        raise ValueError("kmax must be >= 1")
    cdef Py_ssize_t n = w0.shape[0]
    cdef Py_ssize_t m = w0.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((n, kmax))
    cdef Py_ssize_t i, j, c, top
    cdef double a, b
    cdef double[:, ::1] u = out
    cdef double[:, ::1] v0 = w0
    cdef double[:, ::1] v1 = w1
    with nogil:
        for i in range(n):
            u[i, 0] = 1.0
            for j in range(m):
                a = v0[i, j]
                b = v1[i, j]
                top = j + 1
                if top > kmax - 1:
                    top = kmax - 1
                for c in range(top, 0, -1):
                    u[i, c] = a * u[i, c] + b * u[i, c - 1]
                u[i, 0] = u[i, 0] * a
    return out


def convolve_counts(object acc_in, object part_in, int kmax):
    """Truncated per-row convolution of two count distributions."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] acc = np.ascontiguousarray(acc_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] part = np.ascontiguousarray(part_in, dtype=np.float64)
    if acc.shape[0] != part.shape[0]:
        raise ValueError("acc and part must be row-aligned 2-D matrices")
    if acc.shape[1] != kmax:
        raise ValueError("acc must have exactly kmax columns")
    cdef Py_ssize_t n = acc.shape[0]
    cdef Py_ssize_t w = part.shape[1]
    if w > kmax:
        w = kmax
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((n, kmax))
    cdef double[:, ::1] o = out
    cdef double[:, ::1] va = acc
    cdef double[:, ::1] vp = part
    cdef Py_ssize_t i, t, u
    cdef double s
    with nogil:
        for i in range(n):
            for t in range(kmax):
                s = 0.0
                for u in range(w):
                    if u > t:
                        break
                    s = s + vp[i, u] * va[i, t - u]
                o[i, t] = s
    return out

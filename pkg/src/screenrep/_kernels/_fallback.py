"""Numpy reference implementation of the count-recursion kernels."""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def count_tail_dp(w0: np.ndarray, w1: np.ndarray, kmax: int) -> np.ndarray:
    """Per-row sums of products over binary vectors with a fixed number of ones.

    For each row i, ``out[i, c] = sum over h in {0,1}^m with |h| = c of
    prod_j w_{h_j}[i, j]`` for c = 0..kmax-1. Vectors with c >= kmax are
    dropped (they never enter a below-k tail sum).
    """
    w0 = np.ascontiguousarray(w0, dtype=np.float64)
    w1 = np.ascontiguousarray(w1, dtype=np.float64)
    if w0.shape != w1.shape or w0.ndim != 2:
        raise ValueError("w0 and w1 must be matching (n, m) matrices")
    n, m = w0.shape
    if kmax < 1:
        raise ValueError("kmax must be >= 1")
    out = np.zeros((n, kmax))
    out[:, 0] = 1.0
    for j in range(m):
        a = w0[:, j]
        b = w1[:, j]
        top = min(j + 1, kmax - 1)
        for c in range(top, 0, -1):
            out[:, c] = a * out[:, c] + b * out[:, c - 1]
        out[:, 0] *= a
    return out


def convolve_counts(acc: np.ndarray, part: np.ndarray, kmax: int) -> np.ndarray:
    """Truncated per-row convolution of two count distributions.

    ``acc`` is (n, kmax), ``part`` is (n, c+1); returns the (n, kmax) count
    distribution of the sum, discarding counts >= kmax.
    """
    acc = np.ascontiguousarray(acc, dtype=np.float64)
    part = np.ascontiguousarray(part, dtype=np.float64)
    if acc.ndim != 2 or part.ndim != 2 or acc.shape[0] != part.shape[0]:
        raise ValueError("acc and part must be row-aligned 2-D matrices")
    if acc.shape[1] != kmax:
        raise ValueError("acc must have exactly kmax columns")
    out = np.zeros_like(acc)
    for u in range(min(part.shape[1], kmax)):
        out[:, u:] += part[:, u : u + 1] * acc[:, : kmax - u]
    return out

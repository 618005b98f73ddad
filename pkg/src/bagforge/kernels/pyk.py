"""Numpy implementations of the hot kernels.

This is the fallback backend used when the compiled extension is not
built; it is also the reference the benchmark compares against.  All
kernels take C-contiguous 2-D float32 or float64 arrays and return an
array of the same dtype.
"""

import numpy as np

NAME = "py"


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.matmul(a, b)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    # max-subtraction keeps exp() in range for arbitrarily large inputs
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def layer_norm_rows(x, gamma, beta, eps):
    """Per-row normalization with population variance.

    Returns (y, mean, rstd); mean/rstd are kept for the backward rule.
    Moments accumulate in float64 regardless of storage dtype.
    """
    mean = x.mean(axis=1, keepdims=True, dtype=np.float64)
    var = np.square(x.astype(np.float64) - mean).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    mean = mean.astype(x.dtype)
    rstd = rstd.astype(x.dtype)
    y = (x - mean) * rstd * gamma + beta
    return y.astype(x.dtype, copy=False), mean, rstd


def pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between all row pairs (Gram trick)."""
    sq = np.einsum("ij,ij->i", x, x)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d

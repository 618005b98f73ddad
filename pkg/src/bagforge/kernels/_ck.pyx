# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: matmul, row softmax, row layer-norm, pairwise distances.

Accumulation orders are fixed (sequential, row-major) so results are
bit-reproducible across runs of the same build.
"""

import numpy as np

cimport cython
from libc.math cimport exp, sqrt

NAME = "c"

ctypedef fused real:
    float
    double


def matmul(real[:, ::1] a, real[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t p = a.shape[1]
    cdef Py_ssize_t n = b.shape[1]
    if b.shape[0] != p:
        raise ValueError("inner dimensions differ")
    if real is float:
        out = np.zeros((m, n), dtype=np.float32)
    else:
        out = np.zeros((m, n), dtype=np.float64)
    cdef real[:, ::1] c = out
    cdef Py_ssize_t i, j, k
    cdef real aik
    for i in range(m):
        for k in range(p):
            aik = a[i, k]
            for j in range(n):
                c[i, j] += aik * b[k, j]
    return out


def softmax_rows(real[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t n = x.shape[1]
    if real is float:
        out = np.empty((m, n), dtype=np.float32)
    else:
        out = np.empty((m, n), dtype=np.float64)
    cdef real[:, ::1] y = out
    cdef Py_ssize_t i, j
    cdef double mx, s, e
    for i in range(m):
        mx = x[i, 0]
        for j in range(1, n):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(n):
            e = exp(<double> x[i, j] - mx)
            y[i, j] = <real> e
            s += e
        for j in range(n):
            y[i, j] = <real> (y[i, j] / s)
    return out


def layer_norm_rows(real[:, ::1] x, real[:, ::1] gamma, real[:, ::1] beta,
                    double eps):
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t n = x.shape[1]
    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    out = np.empty((m, n), dtype=dt)
    mean_out = np.empty((m, 1), dtype=dt)
    rstd_out = np.empty((m, 1), dtype=dt)
    cdef real[:, ::1] y = out
    cdef real[:, ::1] mean = mean_out
    cdef real[:, ::1] rstd = rstd_out
    cdef Py_ssize_t i, j
    cdef double s, v, d, mu, r
    for i in range(m):
        s = 0.0
        for j in range(n):
            s += x[i, j]
        mu = s / n
        v = 0.0
        for j in range(n):
            d = x[i, j] - mu
            v += d * d
        r = 1.0 / sqrt(v / n + eps)
        mean[i, 0] = <real> mu
        rstd[i, 0] = <real> r
        for j in range(n):
            y[i, j] = <real> ((x[i, j] - <real> mu) * <real> r) * gamma[0, j] \
                + beta[0, j]
    return out, mean_out, rstd_out


def pairwise_sq_dists(real[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t n = x.shape[1]
    if real is float:
        out = np.zeros((m, m), dtype=np.float32)
    else:
        out = np.zeros((m, m), dtype=np.float64)
    cdef real[:, ::1] d = out
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    for i in range(m):
        for j in range(i + 1, m):
            acc = 0.0
            for k in range(n):
                diff = <double> x[i, k] - <double> x[j, k]
                acc += diff * diff
            d[i, j] = <real> acc
            d[j, i] = <real> acc
    return out

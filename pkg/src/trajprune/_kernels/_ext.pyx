# Compiled hot kernels. Same contract as fallback.py: float32 in/out,
# float64 accumulation everywhere a sum is formed.

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

NAME = "ext"


cdef inline void _mm_rows(const float[:, ::1] a, const float[:, ::1] b,
                          float[:, ::1] out, double[::1] acc) noexcept nogil:
    # ikj ordering: the inner loop runs over contiguous rows of b and the
    # accumulator, which the compiler can vectorize.
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t k = a.shape[1]
    cdef Py_ssize_t n = b.shape[1]
    cdef Py_ssize_t i, j, t
    cdef double av
    for i in range(m):
        for j in range(n):
            acc[j] = 0.0
        for t in range(k):
            av = <double> a[i, t]
            for j in range(n):
                acc[j] += av * <double> b[t, j]
        for j in range(n):
            out[i, j] = <float> acc[j]


def matmul(float[:, ::1] a, float[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t n = b.shape[1]
    out_arr = np.empty((m, n), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef double[::1] acc = np.empty(n, dtype=np.float64)
    _mm_rows(a, b, out, acc)
    return out_arr


def matmul_batched(float[:, :, ::1] a, float[:, :, ::1] b):
    cdef Py_ssize_t nb = a.shape[0]
    cdef Py_ssize_t m = a.shape[1]
    cdef Py_ssize_t n = b.shape[2]
    out_arr = np.empty((nb, m, n), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef double[::1] acc = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t s
    for s in range(nb):
        _mm_rows(a[s], b[s], out[s], acc)
    return out_arr


def softmax_rows(float[:, ::1] x, double t):
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t cols = x.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef double[::1] row = np.empty(cols, dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double mx, s
    for i in range(rows):
        mx = <double> x[i, 0] / t
        for j in range(cols):
            row[j] = <double> x[i, j] / t
            if row[j] > mx:
                mx = row[j]
        s = 0.0
        for j in range(cols):
            row[j] = exp(row[j] - mx)
            s += row[j]
        for j in range(cols):
            out[i, j] = <float> (row[j] / s)
    return out_arr


def layer_norm(float[:, ::1] x, float[::1] gamma, float[::1] beta, double eps):
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    out_arr = np.empty((rows, d), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double mu, var, dv, inv
    for i in range(rows):
        mu = 0.0
        for j in range(d):
            mu += <double> x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            dv = <double> x[i, j] - mu
            var += dv * dv
        var /= d
        inv = 1.0 / sqrt(var + eps)
        for j in range(d):
            out[i, j] = <float> (((<double> x[i, j] - mu) * inv)
                                 * <double> gamma[j] + <double> beta[j])
    return out_arr


def gram_diff_sq(float[:, ::1] xp, float[:, ::1] x):
    # ||A A^T - B B^T||_F^2 = ||A^T A||_F^2 - 2 ||B^T A||_F^2 + ||B^T B||_F^2
    cdef Py_ssize_t n = xp.shape[0]
    cdef Py_ssize_t d = xp.shape[1]
    cdef double[:, ::1] ata = np.zeros((d, d), dtype=np.float64)
    cdef double[:, ::1] btb = np.zeros((d, d), dtype=np.float64)
    cdef double[:, ::1] bta = np.zeros((d, d), dtype=np.float64)
    cdef Py_ssize_t i, p, q
    cdef double av, bv, total
    for i in range(n):
        for p in range(d):
            av = <double> xp[i, p]
            bv = <double> x[i, p]
            for q in range(d):
                ata[p, q] += av * <double> xp[i, q]
                btb[p, q] += bv * <double> x[i, q]
                bta[p, q] += bv * <double> xp[i, q]
    total = 0.0
    for p in range(d):
        for q in range(d):
            total += ata[p, q] * ata[p, q] - 2.0 * bta[p, q] * bta[p, q] \
                + btb[p, q] * btb[p, q]
    return total

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled EWMA / MEWMA recursions. Mirrors ``_pykernels`` operation for operation."""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def ewma(const double[:, ::1] x, const double[::1] z0, double lam):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1]
    cdef Py_ssize_t t, j
    cdef double keep = 1.0 - lam
    out_arr = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] z = np.array(z0, dtype=np.float64)
    for t in range(n):
        for j in range(k):
            z[j] = lam * x[t, j] + keep * z[j]
            out[t, j] = z[j]
    return out_arr


def mewma_t2(const double[:, ::1] s, const double[::1] z0, const double[::1] center,
             const double[:, ::1] whitener, double lam):
    cdef Py_ssize_t n = s.shape[0], q = s.shape[1], r = whitener.shape[1]
    cdef Py_ssize_t t, i, j
    cdef double keep = 1.0 - lam
    cdef double acc, total
    t2_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] t2 = t2_arr
    z_arr = np.array(z0, dtype=np.float64)
    cdef double[::1] z = z_arr
    cdef double[::1] d = np.empty(q, dtype=np.float64)
    for t in range(n):
        for i in range(q):
            z[i] = lam * s[t, i] + keep * z[i]
            d[i] = z[i] - center[i]
        total = 0.0
        for j in range(r):
            acc = 0.0
            for i in range(q):
                acc = acc + d[i] * whitener[i, j]
            total = total + acc * acc
        t2[t] = total
    return t2_arr, z_arr

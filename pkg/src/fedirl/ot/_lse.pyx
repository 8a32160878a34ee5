# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled log-sum-exp reductions for log-domain Sinkhorn.

Thin wrappers over ``_lse_core.c``. Same contract as ``_lse_fallback``;
inputs must be C-contiguous float64 and finite.
"""
import numpy as np

cdef extern from "_lse_core.h":
    void lse_rows_core(const double *c, const double *g, double inv, Py_ssize_t n, Py_ssize_t m,
                       double *buf, double *out) nogil
    void lse_cols_core(const double *c, const double *f, double inv, Py_ssize_t n, Py_ssize_t m,
                       double *mx, double *out) nogil


def lse_rows(const double[:, ::1] C, const double[::1] g, double eps):
    cdef Py_ssize_t n = C.shape[0], m = C.shape[1]
    if g.shape[0] != m:
        raise ValueError("potential length does not match cost columns")
    out = np.empty(n)
    buf = np.empty(m)
    cdef double[::1] o = out
    cdef double[::1] b = buf
    with nogil:
        lse_rows_core(&C[0, 0], &g[0], 1.0 / eps, n, m, &b[0], &o[0])
    return out


def lse_cols(const double[:, ::1] C, const double[::1] f, double eps):
    cdef Py_ssize_t n = C.shape[0], m = C.shape[1]
    if f.shape[0] != n:
        raise ValueError("potential length does not match cost rows")
    out = np.empty(m)
    mx = np.empty(m)
    cdef double[::1] o = out
    cdef double[::1] x = mx
    with nogil:
        lse_cols_core(&C[0, 0], &f[0], 1.0 / eps, n, m, &x[0], &o[0])
    return out

# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled segment kernels for graph message passing.

Segments are identified by an integer id per row (the destination node of
each message edge). Rows need not be sorted.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, INFINITY

cnp.import_array()


def segment_softmax(const double[:, ::1] scores, const long long[::1] seg, Py_ssize_t n):
    cdef Py_ssize_t E = scores.shape[0], H = scores.shape[1]
    cdef Py_ssize_t e, h, s
    out_arr = np.empty((E, H), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    mx_arr = np.full((n, H), -INFINITY, dtype=np.float64)
    cdef double[:, ::1] mx = mx_arr
    tot_arr = np.zeros((n, H), dtype=np.float64)
    cdef double[:, ::1] tot = tot_arr
    cdef double v
    for e in range(E):
        s = seg[e]
        for h in range(H):
            if scores[e, h] > mx[s, h]:
                mx[s, h] = scores[e, h]
    for e in range(E):
        s = seg[e]
        for h in range(H):
            v = exp(scores[e, h] - mx[s, h])
            out[e, h] = v
            tot[s, h] += v
    for e in range(E):
        s = seg[e]
        for h in range(H):
            out[e, h] /= tot[s, h]
    return out_arr


def segment_softmax_backward(const double[:, ::1] y, const double[:, ::1] g,
                             const long long[::1] seg, Py_ssize_t n):
    cdef Py_ssize_t E = y.shape[0], H = y.shape[1]
    cdef Py_ssize_t e, h, s
    dot_arr = np.zeros((n, H), dtype=np.float64)
    cdef double[:, ::1] dot = dot_arr
    dx_arr = np.empty((E, H), dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    for e in range(E):
        s = seg[e]
        for h in range(H):
            dot[s, h] += g[e, h] * y[e, h]
    for e in range(E):
        s = seg[e]
        for h in range(H):
            dx[e, h] = y[e, h] * (g[e, h] - dot[s, h])
    return dx_arr


def scatter_add(const double[:, ::1] values, const long long[::1] index, Py_ssize_t n):
    cdef Py_ssize_t E = values.shape[0], F = values.shape[1]
    cdef Py_ssize_t e, f, s
    out_arr = np.zeros((n, F), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for e in range(E):
        s = index[e]
        for f in range(F):
            out[s, f] += values[e, f]
    return out_arr

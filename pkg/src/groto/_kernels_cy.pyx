# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: row softmax, pairwise cosine distance, herding.

Mirrors _kernels_np exactly (same shift, same tie rules); the parity test
in tests/test_kernels.py holds the two backends together.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, INFINITY

cnp.import_array()


def softmax_rows(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, k))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double m, s
    for i in range(n):
        m = x[i, 0]
        for j in range(1, k):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(k):
            o[i, j] = exp(x[i, j] - m)
            s += o[i, j]
        for j in range(k):
            o[i, j] /= s
    return out


def pairwise_cosine_distance(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], d = a.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, m))
    cdef double[:, ::1] o = out
    cdef cnp.ndarray[double, ndim=1] na = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] nb = np.empty(m)
    cdef double[::1] nav = na, nbv = nb
    cdef Py_ssize_t i, j, t
    cdef double s
    for i in range(n):
        s = 0.0
        for t in range(d):
            s += a[i, t] * a[i, t]
        nav[i] = sqrt(s)
    for j in range(m):
        s = 0.0
        for t in range(d):
            s += b[j, t] * b[j, t]
        nbv[j] = sqrt(s)
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(d):
                s += a[i, t] * b[j, t]
            o[i, j] = 1.0 - s / (nav[i] * nbv[j])
    return out


def herding_order(double[:, ::1] feats, Py_ssize_t count):
    cdef Py_ssize_t n = feats.shape[0], d = feats.shape[1]
    if count > n:
        count = n
    cdef cnp.ndarray[double, ndim=1] mean = np.asarray(feats).mean(axis=0)
    cdef double[::1] mv = mean
    cdef cnp.ndarray[cnp.intp_t, ndim=1] chosen = np.empty(count, dtype=np.intp)
    cdef cnp.ndarray[double, ndim=1] running = np.zeros(d)
    cdef double[::1] rv = running
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] taken = np.zeros(n, dtype=np.uint8)
    cdef Py_ssize_t k, i, t, pick
    cdef double best, gap, diff
    for k in range(1, count + 1):
        best = INFINITY
        pick = -1
        for i in range(n):
            if taken[i]:
                continue
            gap = 0.0
            for t in range(d):
                diff = mv[t] - (rv[t] + feats[i, t]) / k
                gap += diff * diff
            if gap < best:
                best = gap
                pick = i
        chosen[k - 1] = pick
        taken[pick] = 1
        for t in range(d):
            rv[t] += feats[pick, t]
    return chosen

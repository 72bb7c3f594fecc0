# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; see ``_kernels_py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def segment_dp(cum, dmin, dmax, nominal, double penalty):
    cdef double[:, ::1] c = np.ascontiguousarray(cum, dtype=np.float64)
    cdef long long[::1] lo = np.ascontiguousarray(dmin, dtype=np.int64)
    cdef long long[::1] hi = np.ascontiguousarray(dmax, dtype=np.int64)
    cdef long long[::1] nom = np.ascontiguousarray(nominal, dtype=np.int64)
    cdef Py_ssize_t n_frames = c.shape[0] - 1
    cdef Py_ssize_t n_templates = c.shape[1]
    cdef double[::1] best = np.full(n_frames + 1, -INFINITY)
    cdef long long[::1] back_k = np.full(n_frames + 1, -1, dtype=np.int64)
    cdef long long[::1] back_d = np.zeros(n_frames + 1, dtype=np.int64)
    cdef Py_ssize_t t, k, d, top_d
    cdef long long arg_k, arg_d, dev
    cdef double top, val, prev

    best[0] = 0.0
    for t in range(1, n_frames + 1):
        top = -INFINITY
        arg_k = -1
        arg_d = 0
        for k in range(n_templates):
            top_d = hi[k] if hi[k] < t else t
            for d in range(lo[k], top_d + 1):
                prev = best[t - d]
                if prev == -INFINITY:
                    continue
                dev = d - nom[k]
                if dev < 0:
                    dev = -dev
                val = prev + (c[t, k] - c[t - d, k]) - penalty * dev
                if val > top:
                    top = val
                    arg_k = k
                    arg_d = d
        best[t] = top
        back_k[t] = arg_k
        back_d[t] = arg_d

    segments = []
    t = n_frames
    while t > 0:
        k = back_k[t]
        if k < 0:
            break
        d = back_d[t]
        segments.append((k, t - d, t))
        t -= d
    segments.reverse()
    return np.array(segments, dtype=np.int64).reshape(-1, 3)


def edit_distance(a, b):
    cdef long long[::1] x = np.ascontiguousarray(a, dtype=np.int64)
    cdef long long[::1] y = np.ascontiguousarray(b, dtype=np.int64)
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], i, j
    cdef long long[::1] prev = np.arange(m + 1, dtype=np.int64)
    cdef long long[::1] cur = np.zeros(m + 1, dtype=np.int64)
    cdef long long best, cand
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            best = prev[j] + 1
            cand = cur[j - 1] + 1
            if cand < best:
                best = cand
            cand = prev[j - 1] + (0 if x[i - 1] == y[j - 1] else 1)
            if cand < best:
                best = cand
            cur[j] = best
        prev, cur = cur, prev
    return int(prev[m])

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the history-window and inductive-channel kernels."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs

cnp.import_array()


cdef inline Py_ssize_t _bisect_left(const double[::1] a, Py_ssize_t lo, Py_ssize_t hi,
                                    double x) noexcept nogil:
    cdef Py_ssize_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def history_window(const cnp.int64_t[::1] inc_ptr, const cnp.int64_t[::1] inc_idx,
                   const double[::1] inc_ts, qsrc, qdst, qt, Py_ssize_t k):
    cdef const cnp.int64_t[::1] s = np.ascontiguousarray(qsrc, dtype=np.int64)
    cdef const cnp.int64_t[::1] o = np.ascontiguousarray(qdst, dtype=np.int64)
    cdef const double[::1] t = np.ascontiguousarray(qt, dtype=np.float64)
    cdef Py_ssize_t nq = s.shape[0], num_nodes = inc_ptr.shape[0] - 1
    out_arr = np.full((nq, k), -1, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, lo_u, lo_v, pos
    cdef cnp.int64_t u, v, a, c, last
    with nogil:
        for b in range(nq):
            u = s[b]
            v = o[b]
            if u < 0 or u >= num_nodes:
                u = -1
            if v < 0 or v >= num_nodes or v == u:
                v = -1
            # i, j walk backwards from the time cut in each incidence list
            if u >= 0:
                lo_u = inc_ptr[u]
                i = _bisect_left(inc_ts, lo_u, inc_ptr[u + 1], t[b]) - 1
            else:
                lo_u = 0
                i = -1
            if v >= 0:
                lo_v = inc_ptr[v]
                j = _bisect_left(inc_ts, lo_v, inc_ptr[v + 1], t[b]) - 1
            else:
                lo_v = 0
                j = -1
            pos = k - 1
            last = -1
            while pos >= 0 and (i >= lo_u or j >= lo_v):
                a = inc_idx[i] if i >= lo_u else -1
                c = inc_idx[j] if j >= lo_v else -1
                if a >= c:
                    i -= 1
                    if a == c:
                        j -= 1
                else:
                    a = c
                    j -= 1
                if a != last:
                    out[b, pos] = a
                    pos -= 1
                    last = a
    return out_arr


def inductive_channels(src, dst, ts, valid, double alpha):
    cdef const cnp.int64_t[:, ::1] s = np.ascontiguousarray(src, dtype=np.int64)
    cdef const cnp.int64_t[:, ::1] o = np.ascontiguousarray(dst, dtype=np.int64)
    cdef const double[:, ::1] t = np.ascontiguousarray(ts, dtype=np.float64)
    cdef const cnp.uint8_t[:, ::1] ok = np.ascontiguousarray(valid, dtype=np.uint8)
    cdef Py_ssize_t nb = s.shape[0], l = s.shape[1], b, i, j
    out_arr = np.zeros((nb, 4, l, l), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    with nogil:
        for b in range(nb):
            for i in range(l):
                if not ok[b, i]:
                    continue
                for j in range(i + 1):
                    if not ok[b, j]:
                        continue
                    out[b, 0, i, j] = exp(-alpha * fabs(t[b, i] - t[b, j]))
                    out[b, 1, i, j] = s[b, i] == s[b, j]
                    out[b, 2, i, j] = o[b, i] == o[b, j]
                    out[b, 3, i, j] = s[b, i] == o[b, j]
    return out_arr

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: embedding-bag mean pooling and exact top-k scan."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def bag_mean(const double[:, ::1] table, const long[::1] ids, const long[::1] offsets):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    cdef Py_ssize_t d = table.shape[1]
    cdef Py_ssize_t i, j, c, start, stop
    cdef double inv
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        start = offsets[i]
        stop = offsets[i + 1]
        if stop <= start:
            raise ValueError("empty bag at position %d" % i)
        for j in range(start, stop):
            for c in range(d):
                out[i, c] += table[ids[j], c]
        inv = 1.0 / (stop - start)
        for c in range(d):
            out[i, c] *= inv
    return out_arr


def bag_mean_backward(const double[:, ::1] grad_out, const long[::1] ids,
                      const long[::1] offsets, double[:, ::1] grad_table):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    cdef Py_ssize_t d = grad_out.shape[1]
    cdef Py_ssize_t i, j, c, start, stop
    cdef double inv
    for i in range(n):
        start = offsets[i]
        stop = offsets[i + 1]
        inv = 1.0 / (stop - start)
        for j in range(start, stop):
            for c in range(d):
                grad_table[ids[j], c] += grad_out[i, c] * inv


cdef inline bint _worse(double s_a, Py_ssize_t i_a, double s_b, Py_ssize_t i_b) nogil:
    # a ranks below b: lower score, or equal score and larger index
    return s_a < s_b or (s_a == s_b and i_a > i_b)


cdef void _sift_down(double* hs, Py_ssize_t* hi, Py_ssize_t size, Py_ssize_t pos) nogil:
    # min-heap on rank: root is the worst kept entry
    cdef Py_ssize_t child, other
    cdef double ts
    cdef Py_ssize_t ti
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        other = child + 1
        if other < size and _worse(hs[other], hi[other], hs[child], hi[child]):
            child = other
        if _worse(hs[child], hi[child], hs[pos], hi[pos]):
            ts = hs[pos]; hs[pos] = hs[child]; hs[child] = ts
            ti = hi[pos]; hi[pos] = hi[child]; hi[child] = ti
            pos = child
        else:
            break


def topk_scan(const double[:, ::1] matrix, const double[::1] query, Py_ssize_t k):
    cdef Py_ssize_t n = matrix.shape[0]
    cdef Py_ssize_t d = matrix.shape[1]
    cdef Py_ssize_t i, c, size = 0, pos, parent
    cdef double s, ts
    cdef Py_ssize_t ti
    if k > n:
        k = n
    idx_arr = np.empty(k, dtype=np.intp)
    score_arr = np.empty(k, dtype=np.float64)
    cdef Py_ssize_t[::1] hi = idx_arr
    cdef double[::1] hs = score_arr
    if k == 0:
        return idx_arr, score_arr
    for i in range(n):
        s = 0.0
        for c in range(d):
            s += matrix[i, c] * query[c]
        if size < k:
            pos = size
            hs[pos] = s
            hi[pos] = i
            size += 1
            while pos > 0:
                parent = (pos - 1) // 2
                if _worse(hs[pos], hi[pos], hs[parent], hi[parent]):
                    ts = hs[pos]; hs[pos] = hs[parent]; hs[parent] = ts
                    ti = hi[pos]; hi[pos] = hi[parent]; hi[parent] = ti
                    pos = parent
                else:
                    break
        elif _worse(hs[0], hi[0], s, i):
            hs[0] = s
            hi[0] = i
            _sift_down(&hs[0], &hi[0], size, 0)
    # heap holds the best k; order them best-first
    order = np.lexsort((idx_arr, -score_arr))
    return idx_arr[order], score_arr[order]

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for mask metrics and window merging.

Must stay behaviourally identical to ``_pykernels``; the test suite checks both.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def confusion_counts(const unsigned char[:, ::1] pred, const unsigned char[:, ::1] gt):
    cdef Py_ssize_t H = pred.shape[0], W = pred.shape[1]
    cdef Py_ssize_t i, j
    cdef long long tp = 0, fp = 0, fn = 0, tn = 0
    cdef unsigned char p, g
    for i in range(H):
        for j in range(W):
            p = pred[i, j] != 0
            g = gt[i, j] != 0
            if p and g:
                tp += 1
            elif p:
                fp += 1
            elif g:
                fn += 1
            else:
                tn += 1
    return tp, fp, fn, tn


def mask_boundary(const unsigned char[:, ::1] mask):
    cdef Py_ssize_t H = mask.shape[0], W = mask.shape[1]
    cdef Py_ssize_t i, j
    out_arr = np.zeros((H, W), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    for i in range(H):
        for j in range(W):
            if mask[i, j] == 0:
                continue
            # neighbours outside the image do not make a boundary
            if (i > 0 and mask[i - 1, j] == 0) or (i < H - 1 and mask[i + 1, j] == 0) \
                    or (j > 0 and mask[i, j - 1] == 0) or (j < W - 1 and mask[i, j + 1] == 0):
                out[i, j] = 1
    return out_arr


def dilate_disk(const unsigned char[:, ::1] bmap, int radius):
    cdef Py_ssize_t H = bmap.shape[0], W = bmap.shape[1]
    cdef Py_ssize_t i, j, y, x
    cdef int dy, dx, r2 = radius * radius
    out_arr = np.zeros((H, W), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    for i in range(H):
        for j in range(W):
            if bmap[i, j] == 0:
                continue
            for dy in range(-radius, radius + 1):
                y = i + dy
                if y < 0 or y >= H:
                    continue
                for dx in range(-radius, radius + 1):
                    if dy * dy + dx * dx > r2:
                        continue
                    x = j + dx
                    if 0 <= x < W:
                        out[y, x] = 1
    return out_arr


def accumulate_windows(const long long[::1] starts, const long long[::1] valid,
                       const double[:, :, :, ::1] probs, Py_ssize_t length):
    cdef Py_ssize_t K = probs.shape[0], H = probs.shape[2], W = probs.shape[3]
    cdef Py_ssize_t k, t, i, j, f
    sums_arr = np.zeros((length, H, W), dtype=np.float64)
    counts_arr = np.zeros(length, dtype=np.int64)
    cdef double[:, :, ::1] sums = sums_arr
    cdef long long[::1] counts = counts_arr
    for k in range(K):
        for t in range(valid[k]):
            f = starts[k] + t
            counts[f] += 1
            for i in range(H):
                for j in range(W):
                    sums[f, i, j] += probs[k, t, i, j]
    return sums_arr, counts_arr

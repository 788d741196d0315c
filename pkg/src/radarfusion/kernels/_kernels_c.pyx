# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the numpy fallback kernels (see _kernels_py.py)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, floor

cnp.import_array()

BACKEND = "cython"


def iou_matrix(a, b):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] aa = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] bb = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = aa.shape[0], m = bb.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((n, m), dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double ix, iy, inter, area_a, area_b
    for i in range(n):
        area_a = (aa[i, 2] - aa[i, 0]) * (aa[i, 3] - aa[i, 1])
        for j in range(m):
            ix = min(aa[i, 2], bb[j, 2]) - max(aa[i, 0], bb[j, 0])
            iy = min(aa[i, 3], bb[j, 3]) - max(aa[i, 1], bb[j, 1])
            if ix > 0 and iy > 0:
                inter = ix * iy
                area_b = (bb[j, 2] - bb[j, 0]) * (bb[j, 3] - bb[j, 1])
                out[i, j] = inter / (area_a + area_b - inter)
    return out


def roi_pool_max(fm, double x1, double y1, double x2, double y2, int ph, int pw):
    cdef cnp.ndarray[cnp.float64_t, ndim=3] f = np.ascontiguousarray(fm, dtype=np.float64)
    cdef Py_ssize_t h = f.shape[0], w = f.shape[1], c = f.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.zeros((ph, pw, c), dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=3] argmax = np.full((ph, pw, c), -1, dtype=np.int64)
    cdef double bin_h = (y2 - y1) / ph
    cdef double bin_w = (x2 - x1) / pw
    cdef Py_ssize_t i, j, r, q, k, r0, r1, c0, c1
    cdef double v
    for i in range(ph):
        r0 = <Py_ssize_t>floor(y1 + i * bin_h)
        r1 = <Py_ssize_t>ceil(y1 + (i + 1) * bin_h)
        if r0 < 0:
            r0 = 0
        if r1 > h:
            r1 = h
        if r1 <= r0:
            continue
        for j in range(pw):
            c0 = <Py_ssize_t>floor(x1 + j * bin_w)
            c1 = <Py_ssize_t>ceil(x1 + (j + 1) * bin_w)
            if c0 < 0:
                c0 = 0
            if c1 > w:
                c1 = w
            if c1 <= c0:
                continue
            for k in range(c):
                for r in range(r0, r1):
                    for q in range(c0, c1):
                        v = f[r, q, k]
                        if argmax[i, j, k] < 0 or v > out[i, j, k]:
                            out[i, j, k] = v
                            argmax[i, j, k] = r * w + q
    return out, argmax

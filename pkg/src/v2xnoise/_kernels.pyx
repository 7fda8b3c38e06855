# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled raster kernels; see ``_kernels_py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, INFINITY

cnp.import_array()


def zbuffer_min(const cnp.int64_t[:] rows, const cnp.int64_t[:] cols, const double[:] depth,
                Py_ssize_t height, Py_ssize_t width):
    out_arr = np.zeros((height, width), dtype=np.float64)
    valid_arr = np.zeros((height, width), dtype=np.bool_)
    cdef double[:, ::1] out = out_arr
    cdef cnp.npy_bool[:, ::1] valid = valid_arr
    cdef Py_ssize_t k, r, c, n = depth.shape[0]
    cdef double d
    with nogil:
        for k in range(n):
            r = rows[k]
            c = cols[k]
            d = depth[k]
            if not valid[r, c] or d < out[r, c]:
                out[r, c] = d
                valid[r, c] = 1
    return out_arr, valid_arr


cdef inline double _pick(double a, double b, bint take_max) noexcept nogil:
    if take_max:
        return a if a >= b else b
    return a if a <= b else b


def pool_masked(const double[:, :] depth, valid_in, Py_ssize_t window, bint take_max=True):
    cdef const cnp.npy_bool[:, :] valid = np.ascontiguousarray(valid_in, dtype=np.bool_)
    cdef Py_ssize_t H = depth.shape[0], W = depth.shape[1], r = window // 2
    cdef Py_ssize_t i, j, k, lo, hi
    cdef double fill = -INFINITY if take_max else INFINITY
    cdef double acc
    tmp_arr = np.empty((H, W), dtype=np.float64)
    out_arr = np.zeros((H, W), dtype=np.float64)
    out_valid_arr = np.zeros((H, W), dtype=np.bool_)
    cdef double[:, ::1] tmp = tmp_arr
    cdef double[:, ::1] out = out_arr
    cdef cnp.npy_bool[:, ::1] out_valid = out_valid_arr
    with nogil:
        for i in range(H):
            for j in range(W):
                lo = j - r if j >= r else 0
                hi = j + r if j + r < W else W - 1
                acc = fill
                for k in range(lo, hi + 1):
                    if valid[i, k]:
                        acc = _pick(acc, depth[i, k], take_max)
                tmp[i, j] = acc
        for i in range(H):
            lo = i - r if i >= r else 0
            hi = i + r if i + r < H else H - 1
            for j in range(W):
                acc = fill
                for k in range(lo, hi + 1):
                    acc = _pick(acc, tmp[k, j], take_max)
                if acc != fill:
                    out[i, j] = acc
                    out_valid[i, j] = 1
    return out_arr, out_valid_arr


def warp_bilinear(const cnp.uint8_t[:, :, :] img, hinv):
    cdef Py_ssize_t H = img.shape[0], W = img.shape[1], C = img.shape[2]
    cdef const double[::1] h = np.ascontiguousarray(hinv, dtype=np.float64).reshape(-1)
    out_arr = np.zeros((H, W, C), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, c, x0, y0
    cdef double x, y, w, sx, sy, fx, fy, w00, w01, w10, w11, p00, p01, p10, p11, val
    cdef bint in00, in01, in10, in11
    with nogil:
        for i in range(H):
            y = <double>i
            for j in range(W):
                x = <double>j
                w = h[6] * x + h[7] * y + h[8]
                if not (w > 0):
                    continue
                sx = (h[0] * x + h[1] * y + h[2]) / w
                sy = (h[3] * x + h[4] * y + h[5]) / w
                if not (sx > -1.0 and sx < W and sy > -1.0 and sy < H):
                    continue
                x0 = <Py_ssize_t>floor(sx)
                y0 = <Py_ssize_t>floor(sy)
                fx = sx - floor(sx)
                fy = sy - floor(sy)
                w00 = (1.0 - fx) * (1.0 - fy)
                w01 = fx * (1.0 - fy)
                w10 = (1.0 - fx) * fy
                w11 = fx * fy
                in00 = x0 >= 0 and y0 >= 0
                in01 = x0 + 1 < W and y0 >= 0
                in10 = x0 >= 0 and y0 + 1 < H
                in11 = x0 + 1 < W and y0 + 1 < H
                for c in range(C):
                    p00 = img[y0, x0, c] if in00 else 0.0
                    p01 = img[y0, x0 + 1, c] if in01 else 0.0
                    p10 = img[y0 + 1, x0, c] if in10 else 0.0
                    p11 = img[y0 + 1, x0 + 1, c] if in11 else 0.0
                    val = w00 * p00 + w01 * p01 + w10 * p10 + w11 * p11
                    val = floor(val + 0.5)
                    if val < 0.0:
                        val = 0.0
                    elif val > 255.0:
                        val = 255.0
                    out[i, j, c] = <cnp.uint8_t>val
    return out_arr

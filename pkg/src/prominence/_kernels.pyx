# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: raster-scan minimum barrier distance and FAST-9."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

# Bresenham circle of radius 3, clockwise from 12 o'clock, as (dx, dy)
cdef int CIRCLE_DX[16]
cdef int CIRCLE_DY[16]
CIRCLE_DX[:] = [0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3, -3, -3, -2, -1]
CIRCLE_DY[:] = [-3, -3, -2, -1, 0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3]


cdef inline void _relax(double[:, ::1] U, double[:, ::1] H, double[:, ::1] L,
                        const double[:, ::1] I, Py_ssize_t y, Py_ssize_t x,
                        Py_ssize_t ny, Py_ssize_t nx) noexcept nogil:
    cdef double u = U[ny, nx]
    if u == INFINITY:
        return
    cdef double v = I[y, x]
    cdef double hi = H[ny, nx]
    cdef double lo = L[ny, nx]
    if v > hi:
        hi = v
    if v < lo:
        lo = v
    if hi - lo < U[y, x]:
        U[y, x] = hi - lo
        H[y, x] = hi
        L[y, x] = lo


def mbd_raster(const double[:, ::1] img, const unsigned char[:, ::1] seeds, int passes):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t y, x
    cdef int k
    U_arr = np.full((h, w), np.inf)
    H_arr = np.array(img, dtype=np.float64, copy=True)
    L_arr = np.array(img, dtype=np.float64, copy=True)
    cdef double[:, ::1] U = U_arr
    cdef double[:, ::1] H = H_arr
    cdef double[:, ::1] L = L_arr
    for y in range(h):
        for x in range(w):
            if seeds[y, x]:
                U[y, x] = 0.0
    with nogil:
        for k in range(passes):
            for y in range(h):
                for x in range(w):
                    if y > 0:
                        _relax(U, H, L, img, y, x, y - 1, x)
                    if x > 0:
                        _relax(U, H, L, img, y, x, y, x - 1)
            for y in range(h - 1, -1, -1):
                for x in range(w - 1, -1, -1):
                    if y < h - 1:
                        _relax(U, H, L, img, y, x, y + 1, x)
                    if x < w - 1:
                        _relax(U, H, L, img, y, x, y, x + 1)
    return U_arr


def fast_response(const unsigned char[:, ::1] img, int threshold, int margin):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t y, x
    cdef int i, j, p, v, state, run, best_run, n_bright, n_dark, total
    cdef long run_sum, best_sum, all_sum
    cdef int vals[16]
    cdef int cls[16]
    out_arr = np.zeros((h, w), dtype=np.int64)
    cdef long long[:, ::1] out = out_arr
    if margin < 3:
        margin = 3
    with nogil:
        for y in range(margin, h - margin):
            for x in range(margin, w - margin):
                p = img[y, x]
                n_bright = 0
                n_dark = 0
                all_sum = 0
                for i in range(16):
                    v = img[y + CIRCLE_DY[i], x + CIRCLE_DX[i]]
                    vals[i] = v - p if v > p else p - v
                    if v > p + threshold:
                        cls[i] = 1
                        n_bright += 1
                    elif v < p - threshold:
                        cls[i] = -1
                        n_dark += 1
                    else:
                        cls[i] = 0
                if n_bright < 9 and n_dark < 9:
                    continue
                state = 1 if n_bright >= 9 else -1
                if (state == 1 and n_bright == 16) or (state == -1 and n_dark == 16):
                    for i in range(16):
                        all_sum += vals[i]
                    out[y, x] = all_sum
                    continue
                run = 0
                run_sum = 0
                best_run = 0
                best_sum = 0
                for j in range(32):
                    i = j & 15
                    if cls[i] == state:
                        run += 1
                        run_sum += vals[i]
                        if run > best_run:
                            best_run = run
                            best_sum = run_sum
                    else:
                        run = 0
                        run_sum = 0
                if best_run >= 9:
                    out[y, x] = best_sum
    return out_arr

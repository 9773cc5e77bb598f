# cython: language_level=3
"""Compiled first-hit ray casting and cell-center rasterization.

Mirrors ``mmff._raycast_py`` operation for operation so both backends
produce identical floating-point results.
"""
from libc.math cimport sqrt, INFINITY

import numpy as np


cdef inline double _hit_circle(double ox, double oy, double dx, double dy,
                               double cx, double cy, double r) nogil:
    cdef double ocx = ox - cx
    cdef double ocy = oy - cy
    cdef double b = ocx * dx + ocy * dy
    cdef double q = (ocx * ocx + ocy * ocy) - r * r
    cdef double disc = b * b - q
    cdef double sq, t
    if disc < 0.0:
        return INFINITY
    sq = sqrt(disc)
    t = -b - sq
    if t >= 0.0:
        return t
    if -b + sq >= 0.0:
        return 0.0
    return INFINITY


cdef inline double _hit_box(double ox, double oy, double dx, double dy,
                            double x0, double y0, double x1, double y1) nogil:
    cdef double tn = -INFINITY
    cdef double tf = INFINITY
    cdef double t1, t2
    if dx != 0.0:
        t1 = (x0 - ox) / dx
        t2 = (x1 - ox) / dx
        if t1 > t2:
            t1, t2 = t2, t1
        tn = t1
        tf = t2
    elif ox < x0 or ox > x1:
        return INFINITY
    if dy != 0.0:
        t1 = (y0 - oy) / dy
        t2 = (y1 - oy) / dy
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > tn:
            tn = t1
        if t2 < tf:
            tf = t2
    elif oy < y0 or oy > y1:
        return INFINITY
    if tn > tf or tf < 0.0:
        return INFINITY
    if tn < 0.0:
        return 0.0
    return tn


def cast_rays(double ox, double oy, const double[:, :] dirs,
              const double[:, :] boxes, const double[:, :] circles,
              double max_range):
    cdef Py_ssize_t n = dirs.shape[0]
    cdef Py_ssize_t nb = boxes.shape[0]
    cdef Py_ssize_t nc = circles.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[:] out = out_arr
    cdef Py_ssize_t i, j
    cdef double best, t, dx, dy
    with nogil:
        for i in range(n):
            dx = dirs[i, 0]
            dy = dirs[i, 1]
            best = max_range
            for j in range(nb):
                t = _hit_box(ox, oy, dx, dy, boxes[j, 0], boxes[j, 1],
                             boxes[j, 2], boxes[j, 3])
                if t < best:
                    best = t
            for j in range(nc):
                t = _hit_circle(ox, oy, dx, dy, circles[j, 0], circles[j, 1],
                                circles[j, 2])
                if t < best:
                    best = t
            out[i] = best
    return out_arr


def rasterize(const double[:] xs, const double[:] ys,
              const double[:, :] boxes, const double[:, :] circles):
    cdef Py_ssize_t w = xs.shape[0]
    cdef Py_ssize_t h = ys.shape[0]
    cdef Py_ssize_t nb = boxes.shape[0]
    cdef Py_ssize_t nc = circles.shape[0]
    out_arr = np.zeros((h, w), dtype=np.float64)
    cdef double[:, :] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double px, py, ex, ey
    with nogil:
        for i in range(h):
            py = ys[i]
            for j in range(w):
                px = xs[j]
                for k in range(nb):
                    if (boxes[k, 0] <= px <= boxes[k, 2]
                            and boxes[k, 1] <= py <= boxes[k, 3]):
                        out[i, j] = 1.0
                        break
                if out[i, j] == 1.0:
                    continue
                for k in range(nc):
                    ex = px - circles[k, 0]
                    ey = py - circles[k, 1]
                    if ex * ex + ey * ey <= circles[k, 2] * circles[k, 2]:
                        out[i, j] = 1.0
                        break
    return out_arr

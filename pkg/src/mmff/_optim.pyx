# cython: language_level=3
"""Fused single-pass ADAM update.

Performs the same floating-point operations, in the same order, as the
numpy path in ``mmff.neural.adam_step``, so results are bit-identical.
"""
from libc.math cimport sqrt


def adam_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                double beta1, double beta2, double lr, double eps,
                double c1, double c2):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double ob1 = 1.0 - beta1
    cdef double ob2 = 1.0 - beta2
    cdef double gi, mi, vi
    if g.shape[0] != n or m.shape[0] != n or v.shape[0] != n:
        raise ValueError("length mismatch")
    with nogil:
        for i in range(n):
            gi = g[i]
            mi = m[i] * beta1
            mi = mi + gi * ob1
            vi = v[i] * beta2
            vi = vi + (gi * ob2) * gi
            m[i] = mi
            v[i] = vi
            p[i] = p[i] - ((mi / c1) * lr) / (sqrt(vi / c2) + eps)

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the loops in ``_pykernels``; same signatures and results."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fmod, M_PI

cnp.import_array()


def sphere_euler(x0, c0, dW, double radius, double safe_radius, Py_ssize_t stride):
    cdef double[:, ::1] x = np.array(x0, dtype=np.float64, order="C", copy=True)
    cdef cnp.int64_t[::1] c = np.array(c0, dtype=np.int64, copy=True)
    cdef double[:, :, ::1] w = np.ascontiguousarray(dW, dtype=np.float64)
    cdef Py_ssize_t P = w.shape[0], n = w.shape[1]
    cdef Py_ssize_t m = n // stride + 1
    xs_arr = np.empty((P, m, 2))
    cs_arr = np.empty((P, m), dtype=np.int64)
    cdef double[:, :, ::1] xs = xs_arr
    cdef cnp.int64_t[:, ::1] cs = cs_arr
    cdef double safe2 = safe_radius * safe_radius
    cdef double a, b, r2, s
    cdef Py_ssize_t p, k, j
    with nogil:
        for p in range(P):
            a = x[p, 0]
            b = x[p, 1]
            xs[p, 0, 0] = a
            xs[p, 0, 1] = b
            cs[p, 0] = c[p]
            for k in range(n):
                r2 = a * a + b * b
                s = (1.0 + r2) / (2.0 * radius)
                a = a + w[p, k, 0] * s
                b = b + w[p, k, 1] * s
                r2 = a * a + b * b
                if r2 >= safe2:
                    a = a / r2
                    b = b / r2
                    c[p] = 1 - c[p]
                if (k + 1) % stride == 0:
                    j = (k + 1) // stride
                    xs[p, j, 0] = a
                    xs[p, j, 1] = b
                    cs[p, j] = c[p]
    return xs_arr, cs_arr


cdef inline double _wrap(double v) nogil:
    cdef double two_pi = 2.0 * M_PI
    cdef double r = fmod(v + M_PI, two_pi)
    if r < 0:
        r += two_pi
    return r - M_PI


def torus_couple(x0, y0, dWx, int reflect, double merge_radius, Py_ssize_t stride):
    cdef double[:, ::1] x = np.array(x0, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] y = np.array(y0, dtype=np.float64, order="C", copy=True)
    cdef double[:, :, ::1] w = np.ascontiguousarray(dWx, dtype=np.float64)
    cdef Py_ssize_t P = w.shape[0], n = w.shape[1], d = w.shape[2]
    cdef Py_ssize_t m = n // stride + 1
    xs_arr = np.empty((P, m, d))
    ys_arr = np.empty((P, m, d))
    tau_arr = np.full(P, -1, dtype=np.int64)
    cdef double[:, :, ::1] xs = xs_arr
    cdef double[:, :, ::1] ys = ys_arr
    cdef cnp.int64_t[::1] tau = tau_arr
    delta_arr = np.empty(d)
    cdef double[::1] delta = delta_arr
    cdef double dist, proj, nrm
    cdef bint merged
    cdef Py_ssize_t p, k, i, j
    with nogil:
        for p in range(P):
            for i in range(d):
                xs[p, 0, i] = x[p, i]
                ys[p, 0, i] = y[p, i]
            dist = 0.0
            for i in range(d):
                delta[i] = _wrap(y[p, i] - x[p, i])
                dist += delta[i] * delta[i]
            dist = sqrt(dist)
            merged = dist <= merge_radius
            if merged:
                tau[p] = 0
                for i in range(d):
                    y[p, i] = x[p, i] + (y[p, i] - x[p, i] - delta[i])
            for k in range(n):
                proj = 0.0
                if reflect and not merged:
                    nrm = dist if dist > 0 else 1.0
                    for i in range(d):
                        proj += w[p, k, i] * delta[i] / nrm
                    for i in range(d):
                        x[p, i] += w[p, k, i]
                        y[p, i] += w[p, k, i] - 2.0 * proj * delta[i] / nrm
                else:
                    for i in range(d):
                        x[p, i] += w[p, k, i]
                        y[p, i] += w[p, k, i]
                dist = 0.0
                for i in range(d):
                    delta[i] = _wrap(y[p, i] - x[p, i])
                    dist += delta[i] * delta[i]
                dist = sqrt(dist)
                if not merged and dist <= merge_radius:
                    tau[p] = k + 1
                    merged = True
                if merged:
                    for i in range(d):
                        y[p, i] = x[p, i] + (y[p, i] - x[p, i] - delta[i])
                if (k + 1) % stride == 0:
                    j = (k + 1) // stride
                    for i in range(d):
                        xs[p, j, i] = x[p, i]
                        ys[p, j, i] = y[p, i]
    return xs_arr, ys_arr, tau_arr

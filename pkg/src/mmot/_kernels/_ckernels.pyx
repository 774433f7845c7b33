# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np

from libc.math cimport INFINITY


def tuple_min(dxy, idx, inner):
    cdef const double[:, ::1] d = np.ascontiguousarray(dxy, dtype=np.float64)
    cdef const Py_ssize_t[:, ::1] ix = np.ascontiguousarray(idx, dtype=np.intp)
    cdef const double[::1] inn = np.ascontiguousarray(inner, dtype=np.float64)
    cdef Py_ssize_t n_points = d.shape[0]
    cdef Py_ssize_t n_rows = ix.shape[0]
    cdef Py_ssize_t width = ix.shape[1]
    values = np.empty(n_points)
    arg = np.zeros(n_points, dtype=np.intp)
    cdef double[::1] vv = values
    cdef Py_ssize_t[::1] av = arg
    cdef Py_ssize_t p, t, j, best_t
    cdef double s, best
    with nogil:
        for p in range(n_points):
            best = INFINITY
            best_t = 0
            for t in range(n_rows):
                s = d[p, ix[t, 0]]
                for j in range(1, width):
                    s = s + d[p, ix[t, j]]
                s = s + inn[t]
                if s < best:
                    best = s
                    best_t = t
            vv[p] = best
            av[p] = best_t
    return values, arg


def window_mass_1d(x, w, double width):
    cdef const double[::1] xs = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] ws = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t m = xs.shape[0]
    prefix = np.zeros(m + 1)
    cdef double[::1] pv = prefix
    cdef Py_ssize_t i, end = 0, best_i = 0
    cdef double bound, mass, best = -INFINITY
    with nogil:
        for i in range(m):
            pv[i + 1] = pv[i] + ws[i]
        for i in range(m):
            bound = xs[i] + width
            if end < i:
                end = i
            while end < m and xs[end] < bound:
                end += 1
            mass = pv[end] - pv[i]
            if mass > best:
                best = mass
                best_i = i
    return float(best), best_i

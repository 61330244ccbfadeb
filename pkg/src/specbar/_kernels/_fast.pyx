# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled hot kernels.  Semantics must match _slow.py bit-for-bit in
spirit: same singularity handling, same output shapes and dtypes."""

import numpy as np

cimport numpy as cnp
from libc.math cimport M_PI, cos, sin

cnp.import_array()

cdef double _SING_TOL = 1e-18


def vp_lattice_sum(object x, object pts, double a, double b):
    """Sum of the degree-(a,b) Vallee-Poussin kernel over lattice points."""
    x_arr = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    p_arr = np.ascontiguousarray(np.atleast_2d(np.asarray(pts, dtype=np.float64)))
    cdef double[:, ::1] xv = x_arr
    cdef double[:, ::1] pv = p_arr
    cdef Py_ssize_t n_query = xv.shape[0]
    cdef Py_ssize_t n_lattice = pv.shape[0]
    cdef Py_ssize_t n_dims = xv.shape[1]
    cdef double norm = (b - a) ** n_dims
    cdef double limit = b * b - a * a
    out_arr = np.empty(n_query, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t p, l, d
    cdef double acc, prod, z, half, s2, num
    with nogil:
        for p in range(n_query):
            acc = 0.0
            for l in range(n_lattice):
                prod = 1.0
                for d in range(n_dims):
                    z = 2.0 * M_PI * (xv[p, d] - pv[l, d])
                    half = sin(0.5 * z)
                    s2 = half * half
                    if s2 > _SING_TOL:
                        num = sin(0.5 * (b + a) * z) * sin(0.5 * (b - a) * z)
                        prod *= num / s2
                    else:
                        prod *= limit
                acc += prod
            out[p] = acc / norm
    return out_arr


def trig_features(object u, object omega, object weights, double constant):
    """Feature rows [constant, w_j cos(omega_j.u), w_j sin(omega_j.u)]."""
    u_arr = np.ascontiguousarray(np.atleast_2d(np.asarray(u, dtype=np.float64)))
    om_arr = np.ascontiguousarray(np.asarray(omega, dtype=np.float64))
    w_arr = np.ascontiguousarray(np.asarray(weights, dtype=np.float64))
    cdef double[:, ::1] uv = u_arr
    cdef double[:, ::1] om = om_arr
    cdef double[::1] w = w_arr
    cdef Py_ssize_t n_batch = uv.shape[0]
    cdef Py_ssize_t n_freq = om.shape[0]
    cdef Py_ssize_t n_dims = uv.shape[1]
    out_arr = np.empty((n_batch, 2 * n_freq + 1), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, d
    cdef double angle
    with nogil:
        for i in range(n_batch):
            out[i, 0] = constant
            for j in range(n_freq):
                angle = 0.0
                for d in range(n_dims):
                    angle += uv[i, d] * om[j, d]
                out[i, 1 + 2 * j] = w[j] * cos(angle)
                out[i, 2 + 2 * j] = w[j] * sin(angle)
    return out_arr

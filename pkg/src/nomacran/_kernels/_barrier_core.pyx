# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner-loop kernels for the log-barrier solver.

Same packed-constraint contract as ``fallback``: each constraint is an
affine term minus non-negatively weighted logs of affine forms.  The fused
loops avoid the temporaries the numpy path allocates per Newton step.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport log, INFINITY

IMPL = "cython"


def eval_constraints(double[:, ::1] A, double[::1] b, double[::1] w,
                     long[::1] rc, double[:, ::1] lin, double[::1] const,
                     double[::1] x):
    cdef Py_ssize_t R = A.shape[0]
    cdef Py_ssize_t m = lin.shape[0]
    cdef Py_ssize_t n = x.shape[0]
    cdef cnp.ndarray[double, ndim=1] c_arr = np.empty(m)
    cdef cnp.ndarray[double, ndim=2] G_arr = np.empty((m, n))
    cdef double[::1] c = c_arr
    cdef double[:, ::1] G = G_arr
    cdef cnp.ndarray[double, ndim=1] t_arr = np.empty(R)
    cdef double[::1] t = t_arr
    cdef Py_ssize_t i, j, l
    cdef double acc, tmin = INFINITY, s

    for i in range(m):
        acc = const[i]
        for j in range(n):
            acc += lin[i, j] * x[j]
            G[i, j] = lin[i, j]
        c[i] = acc
    for l in range(R):
        acc = b[l]
        for j in range(n):
            acc += A[l, j] * x[j]
        t[l] = acc
        if acc < tmin:
            tmin = acc
    if tmin <= 0.0:
        return tmin, c_arr, G_arr, t_arr
    for l in range(R):
        i = rc[l]
        c[i] -= w[l] * log(t[l])
        s = w[l] / t[l]
        for j in range(n):
            G[i, j] -= s * A[l, j]
    return tmin, c_arr, G_arr, t_arr


def barrier_terms(double[:, ::1] A, double[::1] b, double[::1] w,
                  long[::1] rc, double[:, ::1] lin, double[::1] const,
                  double[::1] x):
    cdef Py_ssize_t m = lin.shape[0]
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t R = A.shape[0]
    cdef double tmin
    cdef cnp.ndarray[double, ndim=1] grad_arr = np.zeros(n)
    cdef cnp.ndarray[double, ndim=2] hess_arr = np.zeros((n, n))
    cdef double[::1] grad = grad_arr
    cdef double[:, ::1] hess = hess_arr

    tmin, c_arr, G_arr, t_arr = eval_constraints(A, b, w, rc, lin, const, x)
    cdef double[::1] c = c_arr
    cdef double[:, ::1] G = G_arr
    cdef double[::1] t = t_arr
    cdef Py_ssize_t i, j, k, l
    cdef double inv_nc, s, phi = 0.0, cmax = -INFINITY

    for i in range(m):
        if c[i] > cmax:
            cmax = c[i]
    if tmin <= 0.0 or (m > 0 and cmax >= 0.0):
        return False, INFINITY, grad_arr, hess_arr, c_arr
    for i in range(m):
        inv_nc = 1.0 / (-c[i])
        phi += log(inv_nc)
        for j in range(n):
            s = G[i, j] * inv_nc
            grad[j] += s
            for k in range(j, n):
                hess[j, k] += s * G[i, k] * inv_nc
    for l in range(R):
        inv_nc = 1.0 / (-c[rc[l]])
        s = w[l] * inv_nc / (t[l] * t[l])
        for j in range(n):
            if A[l, j] != 0.0:
                for k in range(j, n):
                    hess[j, k] += s * A[l, j] * A[l, k]
    for j in range(n):
        for k in range(j + 1, n):
            hess[k, j] = hess[j, k]
    return True, phi, grad_arr, hess_arr, c_arr


def phi_value(double[:, ::1] A, double[::1] b, double[::1] w,
              long[::1] rc, double[:, ::1] lin, double[::1] const,
              double[::1] x):
    cdef Py_ssize_t R = A.shape[0]
    cdef Py_ssize_t m = lin.shape[0]
    cdef Py_ssize_t n = x.shape[0]
    cdef cnp.ndarray[double, ndim=1] c_arr = np.empty(m)
    cdef double[::1] c = c_arr
    cdef Py_ssize_t i, j, l
    cdef double acc, t, phi = 0.0, cmax = -INFINITY

    for i in range(m):
        acc = const[i]
        for j in range(n):
            acc += lin[i, j] * x[j]
        c[i] = acc
    for l in range(R):
        acc = b[l]
        for j in range(n):
            acc += A[l, j] * x[j]
        if acc <= 0.0:
            return False, INFINITY
        c[rc[l]] -= w[l] * log(acc)
    for i in range(m):
        if c[i] > cmax:
            cmax = c[i]
    if m > 0 and cmax >= 0.0:
        return False, INFINITY
    for i in range(m):
        phi -= log(-c[i])
    return True, phi

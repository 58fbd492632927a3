# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled power-flow kernels: bus injections and dense Jacobian blocks."""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin


def calc_injections(double[:, ::1] g, double[:, ::1] b,
                    double[::1] v, double[::1] theta):
    cdef Py_ssize_t n = v.shape[0]
    p_arr = np.zeros(n)
    q_arr = np.zeros(n)
    cdef double[::1] p = p_arr
    cdef double[::1] q = q_arr
    cdef Py_ssize_t i, j
    cdef double th, ct, st, acc_p, acc_q
    for i in range(n):
        acc_p = 0.0
        acc_q = 0.0
        for j in range(n):
            th = theta[i] - theta[j]
            ct = cos(th)
            st = sin(th)
            acc_p += v[j] * (g[i, j] * ct + b[i, j] * st)
            acc_q += v[j] * (g[i, j] * st - b[i, j] * ct)
        p[i] = v[i] * acc_p
        q[i] = v[i] * acc_q
    return p_arr, q_arr


def calc_jacobian(double[:, ::1] g, double[:, ::1] b,
                  double[::1] v, double[::1] theta,
                  double[::1] p, double[::1] q):
    cdef Py_ssize_t n = v.shape[0]
    dp_dth_arr = np.zeros((n, n))
    dp_dv_arr = np.zeros((n, n))
    dq_dth_arr = np.zeros((n, n))
    dq_dv_arr = np.zeros((n, n))
    cdef double[:, ::1] dp_dth = dp_dth_arr
    cdef double[:, ::1] dp_dv = dp_dv_arr
    cdef double[:, ::1] dq_dth = dq_dth_arr
    cdef double[:, ::1] dq_dv = dq_dv_arr
    cdef Py_ssize_t i, j
    cdef double th, ct, st, a_ij, d_ij
    for i in range(n):
        for j in range(n):
            if i == j:
                dp_dth[i, i] = -q[i] - b[i, i] * v[i] * v[i]
                dq_dth[i, i] = p[i] - g[i, i] * v[i] * v[i]
                dp_dv[i, i] = p[i] / v[i] + g[i, i] * v[i]
                dq_dv[i, i] = q[i] / v[i] - b[i, i] * v[i]
            else:
                th = theta[i] - theta[j]
                ct = cos(th)
                st = sin(th)
                a_ij = g[i, j] * ct + b[i, j] * st
                d_ij = g[i, j] * st - b[i, j] * ct
                dp_dth[i, j] = v[i] * v[j] * d_ij
                dq_dth[i, j] = -v[i] * v[j] * a_ij
                dp_dv[i, j] = v[i] * a_ij
                dq_dv[i, j] = v[i] * d_ij
    return dp_dth_arr, dp_dv_arr, dq_dth_arr, dq_dv_arr

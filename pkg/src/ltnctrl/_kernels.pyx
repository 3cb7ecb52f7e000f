# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled closed-loop rollout."""

import numpy as np

cimport cython


def rollout(double alpha, double s,
            const double[:, ::1] W, const double[:, ::1] B,
            const double[:, ::1] K1, const double[:, ::1] K2,
            const double[::1] r, const double[::1] x0,
            const double[:, ::1] noise, bint integrate):
    """Simulate ``T = noise.shape[0]`` closed-loop steps.

    Feedforward: ``u = K1 x + K2 r``. Integral: ``u = K1 (x - r) + K2 xi``
    with ``xi(t+1) = xi(t) + x(t) - r`` and ``xi(0) = 0``.
    Returns ``(X, U, XI)`` with ``X`` and ``XI`` of length ``T + 1``.
    """
    cdef Py_ssize_t T = noise.shape[0]
    cdef Py_ssize_t n = W.shape[0]
    cdef Py_ssize_t m = B.shape[1]
    X_arr = np.empty((T + 1, n))
    U_arr = np.empty((T, m))
    XI_arr = np.zeros((T + 1, n))
    cdef double[:, ::1] X = X_arr
    cdef double[:, ::1] U = U_arr
    cdef double[:, ::1] XI = XI_arr
    cdef double[::1] fb = np.empty(n)
    cdef double[::1] ff = np.empty(n)
    cdef Py_ssize_t t, i, j
    cdef double acc, pre

    for i in range(n):
        X[0, i] = x0[i]
    for t in range(T):
        for i in range(n):
            if integrate:
                fb[i] = X[t, i] - r[i]
                ff[i] = XI[t, i]
            else:
                fb[i] = X[t, i]
                ff[i] = r[i]
        for j in range(m):
            acc = 0.0
            for i in range(n):
                acc += K1[j, i] * fb[i] + K2[j, i] * ff[i]
            U[t, j] = acc
        for i in range(n):
            pre = noise[t, i]
            for j in range(n):
                pre += W[i, j] * X[t, j]
            for j in range(m):
                pre += B[i, j] * U[t, j]
            if pre < 0.0:
                pre = 0.0
            elif pre > s:
                pre = s
            X[t + 1, i] = alpha * X[t, i] + pre
            if integrate:
                XI[t + 1, i] = XI[t, i] + fb[i]
    return X_arr, U_arr, XI_arr

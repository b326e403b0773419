# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``; same contracts."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, tanh

cnp.import_array()


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def mgs_orthonormalize(raw, double drop_tol=1e-8):
    cdef double[:, :, ::1] src = np.ascontiguousarray(raw, dtype=np.float64)
    cdef Py_ssize_t N = src.shape[0], K = src.shape[1], D = src.shape[2]
    Q_arr = np.zeros((N, K, D))
    R_arr = np.zeros((N, K, K))
    cdef double[:, :, ::1] Q = Q_arr
    cdef double[:, :, ::1] R = R_arr
    cdef double[::1] u = np.empty(D)
    cdef Py_ssize_t n, k, j, d
    cdef double c, norm
    with nogil:
        for n in range(N):
            for k in range(K):
                for d in range(D):
                    u[d] = src[n, k, d]
                for j in range(k):
                    c = 0.0
                    for d in range(D):
                        c += u[d] * Q[n, j, d]
                    for d in range(D):
                        u[d] -= c * Q[n, j, d]
                    R[n, k, j] = c
                norm = 0.0
                for d in range(D):
                    norm += u[d] * u[d]
                norm = sqrt(norm)
                R[n, k, k] = norm
                if norm >= drop_tol:
                    for d in range(D):
                        Q[n, k, d] = u[d] / norm
    return Q_arr, R_arr


def deflate(M, Q, double eps=1e-6):
    m_arr = np.array(M, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] m = m_arr
    cdef double[:, :, ::1] q = np.ascontiguousarray(Q, dtype=np.float64)
    cdef Py_ssize_t N = q.shape[0], K = q.shape[1], D = q.shape[2]
    a_arr = np.zeros((N, K))
    cdef double[:, ::1] alphas = a_arr
    cdef Py_ssize_t n, k, d
    cdef double dot, sq, alpha
    with nogil:
        for n in range(N):
            for k in range(K):
                dot = 0.0
                sq = 0.0
                for d in range(D):
                    dot += m[n, d] * q[n, k, d]
                    sq += q[n, k, d] * q[n, k, d]
                alpha = dot / (sq + eps)
                for d in range(D):
                    m[n, d] -= alpha * q[n, k, d]
                alphas[n, k] = alpha
    return m_arr, a_arr


def gru_step(x, h, Wx, Wh, b):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef double[:, ::1] wx = np.ascontiguousarray(Wx, dtype=np.float64)
    cdef double[:, ::1] wh = np.ascontiguousarray(Wh, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t N = xv.shape[0], I = xv.shape[1], H = hv.shape[1]
    cdef Py_ssize_t G = 3 * H
    out_arr = np.empty((N, H))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] a = np.empty(G)
    cdef double[::1] rh = np.empty(H)
    cdef double[::1] z = np.empty(H)
    cdef Py_ssize_t n, i, g, j
    cdef double s, xi, hj, cand
    with nogil:
        for n in range(N):
            for g in range(G):
                a[g] = bv[g]
            for i in range(I):
                xi = xv[n, i]
                if xi != 0.0:
                    for g in range(G):
                        a[g] += xi * wx[i, g]
            for j in range(H):
                hj = hv[n, j]
                for g in range(2 * H):
                    a[g] += hj * wh[j, g]
            for j in range(H):
                z[j] = _sigmoid(a[j])
                rh[j] = _sigmoid(a[H + j]) * hv[n, j]
            for j in range(H):
                s = a[2 * H + j]
                for i in range(H):
                    s += rh[i] * wh[i, 2 * H + j]
                cand = tanh(s)
                out[n, j] = (1.0 - z[j]) * cand + z[j] * hv[n, j]
    return out_arr

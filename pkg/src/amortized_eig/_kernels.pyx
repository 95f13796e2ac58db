# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Fused per-(outer, inner) GLM log-likelihood sweep.

Computes the (N, M) matrix ``log p(y_n | theta_{n,m}, d)`` without
materialising the (N, M, N_E[, K]) linear-predictor tensor.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, lgamma, fabs

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453


cdef inline double log_sigmoid(double x) nogil:
    # -softplus(-x)
    if x >= 0:
        return -log1p(exp(-x))
    return x - log1p(exp(x))


def loglik_matrix(
    int family,
    const double[:, ::1] design,
    const double[:, :, ::1] theta,
    const double[:, ::1] aux,
    const double[:, :, ::1] y,
    double noise_var,
    int n_trials,
    int n_classes,
):
    cdef Py_ssize_t N = theta.shape[0], M = theta.shape[1]
    cdef Py_ssize_t E = design.shape[0], P = design.shape[1]
    cdef Py_ssize_t K = n_classes
    cdef Py_ssize_t n, m, e, p, k
    cdef double acc, eta, r, mx, z, lse, yv, c, nt = n_trials
    out_arr = np.empty((N, M), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    consts_arr = np.zeros((N, E), dtype=np.float64)
    cdef double[:, ::1] consts = consts_arr
    eta_arr = np.empty(K, dtype=np.float64)
    cdef double[::1] etak = eta_arr

    with nogil:
        # outcome-only terms, shared across inner samples
        for n in range(N):
            for e in range(E):
                if family == 3:
                    yv = y[n, e, 0]
                    consts[n, e] = lgamma(nt + 1.0) - lgamma(yv + 1.0) - lgamma(nt - yv + 1.0)
                elif family == 5:
                    c = lgamma(nt + 1.0)
                    for k in range(K):
                        c -= lgamma(y[n, e, k] + 1.0)
                    consts[n, e] = c

        for n in range(N):
            for m in range(M):
                acc = 0.0
                for e in range(E):
                    if family <= 3:
                        eta = 0.0
                        for p in range(P):
                            eta += design[e, p] * theta[n, m, p]
                        yv = y[n, e, 0]
                        if family == 0:
                            r = yv - eta
                            acc += -0.5 * (LOG_2PI + log(noise_var)) - 0.5 * r * r / noise_var
                        elif family == 1:
                            r = yv - eta
                            acc += -0.5 * (LOG_2PI + log(aux[n, m])) - 0.5 * r * r / aux[n, m]
                        elif family == 2:
                            acc += yv * log_sigmoid(eta) + (1.0 - yv) * log_sigmoid(-eta)
                        else:
                            acc += consts[n, e] + yv * log_sigmoid(eta) + (nt - yv) * log_sigmoid(-eta)
                    else:
                        mx = -1e308
                        for k in range(K):
                            eta = 0.0
                            for p in range(P):
                                eta += design[e, p] * theta[n, m, p * K + k]
                            etak[k] = eta
                            if eta > mx:
                                mx = eta
                        lse = 0.0
                        for k in range(K):
                            lse += exp(etak[k] - mx)
                        lse = mx + log(lse)
                        if family == 4:
                            acc += etak[<Py_ssize_t> y[n, e, 0]] - lse
                        else:
                            acc += consts[n, e]
                            for k in range(K):
                                acc += y[n, e, k] * (etak[k] - lse)
                out[n, m] = acc
    return out_arr

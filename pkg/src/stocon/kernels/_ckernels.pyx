# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: per-path loops in C, released from the GIL."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, log1p, fabs, isfinite, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef enum:
    NMAX = 16

cdef enum:
    GAIN = 0
    CUBIC_ADDITIVE = 1
    VDP = 2


cdef inline void _field(int model, const double* p, const double* x, const double* xi,
                        int n, double* out) noexcept nogil:
    cdef int k
    cdef double a, w2
    if model == GAIN:
        for k in range(n):
            out[k] = xi[0] * x[k]
    elif model == CUBIC_ADDITIVE:
        for k in range(n):
            out[k] = -p[0] * x[k] - p[1] * (x[k] * x[k] * x[k]) + xi[k]
    else:
        a = p[0]
        w2 = p[1] * p[1]
        out[0] = x[1]
        out[1] = -a * (x[0] * x[0] - 1.0) * x[1] - w2 * x[0] + a * xi[0] * (x[3] - x[1])
        out[2] = x[3]
        out[3] = -a * (x[2] * x[2] - 1.0) * x[3] - w2 * x[2] + a * xi[1] * (x[1] - x[3])


cdef inline void _jvp(int model, const double* p, const double* x, const double* xi,
                      const double* d, int n, double* out) noexcept nogil:
    cdef int k
    cdef double a, w2
    if model == GAIN:
        for k in range(n):
            out[k] = xi[0] * d[k]
    elif model == CUBIC_ADDITIVE:
        for k in range(n):
            out[k] = (-p[0] - 3.0 * p[1] * (x[k] * x[k])) * d[k]
    else:
        a = p[0]
        w2 = p[1] * p[1]
        out[0] = d[1]
        out[1] = ((-2.0 * a * x[0] * x[1] - w2) * d[0] + (-a * (x[0] * x[0] - 1.0) - a * xi[0]) * d[1]
                  + a * xi[0] * d[3])
        out[2] = d[3]
        out[3] = ((-2.0 * a * x[2] * x[3] - w2) * d[2] + (-a * (x[2] * x[2] - 1.0) - a * xi[1]) * d[3]
                  + a * xi[1] * d[1])


cdef inline double _renormalize(double* d, int n, double logacc) noexcept nogil:
    cdef int k
    cdef double s = d[0] * d[0]
    for k in range(1, n):
        s = s + d[k] * d[k]
    cdef double nrm = sqrt(s)
    if nrm == 0.0:
        return -INFINITY
    for k in range(n):
        d[k] = d[k] / nrm
    return logacc + log(nrm)


def rk4(int model, params, grid, step_cell, cell_values, x0, dz0, save_idx):
    """Jump-aligned fixed-step RK4 on (x, dz) for a batch of paths."""
    cdef double[::1] p = np.ascontiguousarray(params, dtype=np.float64).reshape(-1)
    if p.shape[0] == 0:
        p = np.zeros(1)
    cdef double[::1] g = np.ascontiguousarray(grid, dtype=np.float64)
    cdef cnp.int64_t[::1] sc = np.ascontiguousarray(step_cell, dtype=np.int64)
    cdef double[:, :, ::1] cv = np.ascontiguousarray(cell_values, dtype=np.float64)
    cdef double[:, ::1] X0 = np.ascontiguousarray(x0, dtype=np.float64)
    cdef double[:, ::1] D0 = np.ascontiguousarray(dz0, dtype=np.float64)
    cdef cnp.int64_t[::1] si = np.ascontiguousarray(save_idx, dtype=np.int64)
    cdef Py_ssize_t P = X0.shape[0], S = si.shape[0], K = g.shape[0] - 1
    cdef int n = <int>X0.shape[1]
    if n > NMAX:
        raise ValueError("state dimension too large for compiled kernel")
    states_arr = np.empty((P, S, n))
    logdz_arr = np.empty((P, S))
    bad_arr = np.full(P, -1, dtype=np.int64)
    cdef double[:, :, ::1] states = states_arr
    cdef double[:, ::1] logdz = logdz_arr
    cdef cnp.int64_t[::1] bad = bad_arr
    cdef double x[NMAX]
    cdef double d[NMAX]
    cdef double xs[NMAX]
    cdef double ds[NMAX]
    cdef double k1[NMAX]
    cdef double k2[NMAX]
    cdef double k3[NMAX]
    cdef double k4[NMAX]
    cdef double l1[NMAX]
    cdef double l2[NMAX]
    cdef double l3[NMAX]
    cdef double l4[NMAX]
    cdef double h, logacc
    cdef const double* xi
    cdef Py_ssize_t q, k, s
    cdef int j
    cdef bint finite
    with nogil:
        for q in range(P):
            for j in range(n):
                x[j] = X0[q, j]
                d[j] = D0[q, j]
            logacc = _renormalize(d, n, 0.0)
            s = 0
            while s < S and si[s] == 0:
                for j in range(n):
                    states[q, s, j] = x[j]
                logdz[q, s] = logacc
                s += 1
            for k in range(K):
                h = g[k + 1] - g[k]
                xi = &cv[q, sc[k], 0]
                _field(model, &p[0], x, xi, n, k1)
                _jvp(model, &p[0], x, xi, d, n, l1)
                for j in range(n):
                    xs[j] = x[j] + 0.5 * h * k1[j]
                    ds[j] = d[j] + 0.5 * h * l1[j]
                _field(model, &p[0], xs, xi, n, k2)
                _jvp(model, &p[0], xs, xi, ds, n, l2)
                for j in range(n):
                    xs[j] = x[j] + 0.5 * h * k2[j]
                    ds[j] = d[j] + 0.5 * h * l2[j]
                _field(model, &p[0], xs, xi, n, k3)
                _jvp(model, &p[0], xs, xi, ds, n, l3)
                for j in range(n):
                    xs[j] = x[j] + h * k3[j]
                    ds[j] = d[j] + h * l3[j]
                _field(model, &p[0], xs, xi, n, k4)
                _jvp(model, &p[0], xs, xi, ds, n, l4)
                finite = True
                for j in range(n):
                    x[j] = x[j] + (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
                    d[j] = d[j] + (h / 6.0) * (l1[j] + 2.0 * l2[j] + 2.0 * l3[j] + l4[j])
                    if not isfinite(x[j]):
                        finite = False
                if logacc == -INFINITY:
                    for j in range(n):
                        d[j] = 0.0
                else:
                    logacc = _renormalize(d, n, logacc)
                if not finite and bad[q] < 0:
                    bad[q] = k + 1
                while s < S and si[s] == k + 1:
                    for j in range(n):
                        states[q, s, j] = x[j]
                    logdz[q, s] = logacc
                    s += 1
    return states_arr, logdz_arr, bad_arr


def gain_iterate(gains, x0, dz0, save_idx):
    """x_{i+1} = a_i x_i with dz propagated alongside."""
    cdef double[:, ::1] a = np.ascontiguousarray(gains, dtype=np.float64)
    cdef double[:, ::1] X0 = np.ascontiguousarray(x0, dtype=np.float64)
    cdef double[:, ::1] D0 = np.ascontiguousarray(dz0, dtype=np.float64)
    cdef cnp.int64_t[::1] si = np.ascontiguousarray(save_idx, dtype=np.int64)
    cdef Py_ssize_t P = X0.shape[0], S = si.shape[0], N = a.shape[1]
    cdef int n = <int>X0.shape[1]
    if n > NMAX:
        raise ValueError("state dimension too large for compiled kernel")
    states_arr = np.empty((P, S, n))
    logdz_arr = np.empty((P, S))
    viol_arr = np.zeros(P, dtype=np.int64)
    cdef double[:, :, ::1] states = states_arr
    cdef double[:, ::1] logdz = logdz_arr
    cdef cnp.int64_t[::1] viol = viol_arr
    cdef double x[NMAX]
    cdef double d[NMAX]
    cdef double ai, logacc, prev, bound
    cdef double slack = log1p(1e-9)
    cdef Py_ssize_t q, i, s
    cdef int j
    with nogil:
        for q in range(P):
            for j in range(n):
                x[j] = X0[q, j]
                d[j] = D0[q, j]
            logacc = _renormalize(d, n, 0.0)
            s = 0
            while s < S and si[s] == 0:
                for j in range(n):
                    states[q, s, j] = x[j]
                logdz[q, s] = logacc
                s += 1
            for i in range(N):
                ai = a[q, i]
                for j in range(n):
                    x[j] = ai * x[j]
                    d[j] = ai * d[j]
                prev = logacc
                if logacc == -INFINITY:
                    for j in range(n):
                        d[j] = 0.0
                else:
                    logacc = _renormalize(d, n, logacc)
                if isfinite(logacc):
                    bound = prev + log(fabs(ai)) + slack
                    if logacc > bound:
                        viol[q] += 1
                while s < S and si[s] == i + 1:
                    for j in range(n):
                        states[q, s, j] = x[j]
                    logdz[q, s] = logacc
                    s += 1
    return states_arr, logdz_arr, viol_arr

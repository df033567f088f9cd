# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.  Signatures match ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, INFINITY

cnp.import_array()


def sinkhorn_scaling(double[:, ::1] K, double[::1] a, double[::1] b, int max_iters, double tol):
    cdef Py_ssize_t n = K.shape[0]
    cdef Py_ssize_t m = K.shape[1]
    cdef int cap = max_iters if max_iters > 1 else 1
    us_arr = np.empty((cap, n))
    vs_arr = np.empty((cap + 1, m))
    cdef double[:, ::1] us = us_arr
    cdef double[:, ::1] vs = vs_arr
    cdef double[::1] z = np.empty(n)
    cdef double[::1] w = np.empty(m)
    cdef Py_ssize_t i, j
    cdef int t = 0
    cdef double acc, err = INFINITY, dev
    for j in range(m):
        vs[0, j] = 1.0
    for i in range(n):
        acc = 0.0
        for j in range(m):
            acc = acc + K[i, j]
        z[i] = acc
    while t < cap:
        for i in range(n):
            us[t, i] = a[i] / z[i]
        for j in range(m):
            w[j] = 0.0
        for i in range(n):
            for j in range(m):
                w[j] = w[j] + K[i, j] * us[t, i]
        for j in range(m):
            vs[t + 1, j] = b[j] / w[j]
        err = 0.0
        for i in range(n):
            acc = 0.0
            for j in range(m):
                acc = acc + K[i, j] * vs[t + 1, j]
            z[i] = acc
            dev = fabs(us[t, i] * acc - a[i])
            if dev > err:
                err = dev
        t += 1
        if err < tol:
            break
    return us_arr[:t].copy(), vs_arr[:t + 1].copy(), err


def sinkhorn_scaling_backward(double[:, ::1] K, double[:, ::1] us, double[:, ::1] vs,
                              double[::1] a, double[::1] b, double[:, ::1] dgamma):
    cdef Py_ssize_t n = K.shape[0]
    cdef Py_ssize_t m = K.shape[1]
    cdef Py_ssize_t T = us.shape[0]
    dK_arr = np.empty((n, m))
    cdef double[:, ::1] dK = dK_arr
    cdef double[::1] du = np.zeros(n)
    cdef double[::1] dv = np.zeros(m)
    cdef double[::1] dw = np.empty(m)
    cdef double[::1] dz = np.empty(n)
    cdef Py_ssize_t i, j, t
    cdef double acc, x
    for i in range(n):
        for j in range(m):
            x = dgamma[i, j] * K[i, j]
            dK[i, j] = dgamma[i, j] * us[T - 1, i] * vs[T, j]
            du[i] = du[i] + x * vs[T, j]
            dv[j] = dv[j] + x * us[T - 1, i]
    for t in range(T - 1, -1, -1):
        for j in range(m):
            dw[j] = -dv[j] * vs[t + 1, j] * vs[t + 1, j] / b[j]
        for i in range(n):
            acc = du[i]
            for j in range(m):
                acc = acc + K[i, j] * dw[j]
                dK[i, j] = dK[i, j] + us[t, i] * dw[j]
            dz[i] = -acc * us[t, i] * us[t, i] / a[i]
            du[i] = 0.0
        for j in range(m):
            dv[j] = 0.0
        for i in range(n):
            for j in range(m):
                dv[j] = dv[j] + K[i, j] * dz[i]
                dK[i, j] = dK[i, j] + dz[i] * vs[t, j]
    return dK_arr


cdef inline double _lse_row(double[:, ::1] C, double[::1] g, Py_ssize_t i, double ie,
                            Py_ssize_t m, double[::1] x) nogil:
    """log-sum-exp over j of (g_j - C_ij) / eps; ``x`` is row scratch."""
    cdef Py_ssize_t j
    cdef double mx = -INFINITY, s = 0.0
    for j in range(m):
        x[j] = (g[j] - C[i, j]) * ie
        if x[j] > mx:
            mx = x[j]
    for j in range(m):
        s += exp(x[j] - mx)
    return mx + log(s)


cdef void _col_softmax(double[:, ::1] C, double[::1] f, double ie, double[:, ::1] E,
                       double[::1] mx, double[::1] s, bint normalise) nogil:
    """Column-wise softmax over i of (f_i - C_ij) / eps, swept in row-major order.

    Leaves exp(x - max) in ``E`` and the column log-sum-exp in ``mx``; divides
    ``E`` by the column sums when ``normalise`` is set.
    """
    cdef Py_ssize_t n = C.shape[0], m = C.shape[1], i, j
    for j in range(m):
        mx[j] = -INFINITY
        s[j] = 0.0
    for i in range(n):
        for j in range(m):
            E[i, j] = (f[i] - C[i, j]) * ie
            if E[i, j] > mx[j]:
                mx[j] = E[i, j]
    for i in range(n):
        for j in range(m):
            E[i, j] = exp(E[i, j] - mx[j])
            s[j] += E[i, j]
    if normalise:
        for i in range(n):
            for j in range(m):
                E[i, j] = E[i, j] / s[j]
    for j in range(m):
        mx[j] = mx[j] + log(s[j])


def sinkhorn_log(double[:, ::1] C, double eps, double[::1] a, double[::1] b, int max_iters, double tol):
    cdef Py_ssize_t n = C.shape[0]
    cdef Py_ssize_t m = C.shape[1]
    cdef int cap = max_iters if max_iters > 1 else 1
    fs_arr = np.empty((cap, n))
    gs_arr = np.empty((cap + 1, m))
    cdef double[:, ::1] fs = fs_arr
    cdef double[:, ::1] gs = gs_arr
    cdef double[:, ::1] E = np.empty((n, m))
    cdef double[::1] r = np.empty(n)
    cdef double[::1] x = np.empty(m)
    cdef double[::1] lse = np.empty(m)
    cdef double[::1] s = np.empty(m)
    cdef Py_ssize_t i, j
    cdef int t = 0
    cdef double err = INFINITY, dev, ie = 1.0 / eps
    with nogil:
        for j in range(m):
            gs[0, j] = 0.0
        for i in range(n):
            r[i] = _lse_row(C, gs[0], i, ie, m, x)
        while t < cap:
            for i in range(n):
                fs[t, i] = eps * log(a[i]) - eps * r[i]
            _col_softmax(C, fs[t], ie, E, lse, s, False)
            for j in range(m):
                gs[t + 1, j] = eps * log(b[j]) - eps * lse[j]
            err = 0.0
            for i in range(n):
                r[i] = _lse_row(C, gs[t + 1], i, ie, m, x)
                dev = fabs(exp(fs[t, i] * ie + r[i]) - a[i])
                if dev > err:
                    err = dev
            t += 1
            if err < tol:
                break
    return fs_arr[:t].copy(), gs_arr[:t + 1].copy(), err


def sinkhorn_log_backward(double[:, ::1] C, double eps, double[:, ::1] fs, double[:, ::1] gs,
                          double[:, ::1] dgamma):
    cdef Py_ssize_t n = C.shape[0]
    cdef Py_ssize_t m = C.shape[1]
    cdef Py_ssize_t T = fs.shape[0]
    dC_arr = np.empty((n, m))
    cdef double[:, ::1] dC = dC_arr
    cdef double[:, ::1] E = np.empty((n, m))
    cdef double[::1] df = np.zeros(n)
    cdef double[::1] dg = np.zeros(m)
    cdef double[::1] lse = np.empty(m)
    cdef double[::1] s = np.empty(m)
    cdef Py_ssize_t i, j, t
    cdef double x, q, acc, mx, tot, ie = 1.0 / eps
    with nogil:
        for i in range(n):
            for j in range(m):
                x = dgamma[i, j] * exp((fs[T - 1, i] + gs[T, j] - C[i, j]) * ie) * ie
                dC[i, j] = -x
                df[i] += x
                dg[j] += x
        for t in range(T - 1, -1, -1):
            _col_softmax(C, fs[t], ie, E, lse, s, True)
            for i in range(n):
                acc = 0.0
                for j in range(m):
                    q = E[i, j] * dg[j]
                    acc += q
                    dC[i, j] += q
                df[i] -= acc
            for j in range(m):
                dg[j] = 0.0
            for i in range(n):
                mx = -INFINITY
                for j in range(m):
                    E[i, j] = (gs[t, j] - C[i, j]) * ie
                    if E[i, j] > mx:
                        mx = E[i, j]
                tot = 0.0
                for j in range(m):
                    E[i, j] = exp(E[i, j] - mx)
                    tot += E[i, j]
                x = df[i] / tot
                for j in range(m):
                    q = E[i, j] * x
                    dg[j] -= q
                    dC[i, j] += q
                df[i] = 0.0
    return dC_arr


def fps_order(points, Py_ssize_t n, Py_ssize_t start):
    cdef double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t N = p.shape[0]
    out_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] out = out_arr
    cdef double[::1] d = np.empty(N)
    cdef Py_ssize_t i, k, best = start
    cdef double dx, dy, dz, dd, bestd
    out[0] = start
    for i in range(N):
        dx = p[i, 0] - p[start, 0]
        dy = p[i, 1] - p[start, 1]
        dz = p[i, 2] - p[start, 2]
        d[i] = dx * dx + dy * dy + dz * dz
    for k in range(1, n):
        bestd = -1.0
        for i in range(N):
            if d[i] > bestd:
                bestd = d[i]
                best = i
        out[k] = best
        for i in range(N):
            dx = p[i, 0] - p[best, 0]
            dy = p[i, 1] - p[best, 1]
            dz = p[i, 2] - p[best, 2]
            dd = dx * dx + dy * dy + dz * dz
            if dd < d[i]:
                d[i] = dd
    return out_arr


def nn_sqdist(x, y):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], m = yv.shape[0], k = xv.shape[1]
    d_arr = np.empty(n)
    idx_arr = np.empty(n, dtype=np.int64)
    cdef double[::1] d = d_arr
    cdef long long[::1] idx = idx_arr
    cdef Py_ssize_t i, j, c, best
    cdef double acc, diff, bestd
    for i in range(n):
        bestd = INFINITY
        best = 0
        for j in range(m):
            acc = 0.0
            for c in range(k):
                diff = xv[i, c] - yv[j, c]
                acc = acc + diff * diff
            if acc < bestd:
                bestd = acc
                best = j
        d[i] = bestd
        idx[i] = best
    return d_arr, idx_arr


def argmax_counts(F):
    cdef double[:, ::1] f = np.ascontiguousarray(F, dtype=np.float64)
    cdef Py_ssize_t n = f.shape[0], D = f.shape[1]
    counts_arr = np.zeros(n, dtype=np.int64)
    cdef long long[::1] counts = counts_arr
    cdef Py_ssize_t i, j, best
    cdef double bestv
    for j in range(D):
        best = 0
        bestv = f[0, j]
        for i in range(1, n):
            if f[i, j] > bestv:
                bestv = f[i, j]
                best = i
        counts[best] += 1
    return counts_arr

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, copysign, isfinite, INFINITY
from libc.stdlib cimport malloc, calloc, free
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm, dgemv

cnp.import_array()


def jacobi_sweeps(double[:, ::1] at, double[:, ::1] vt, double tol, int max_sweeps):
    cdef Py_ssize_t n = at.shape[0]
    cdef Py_ssize_t m = at.shape[1]
    cdef Py_ssize_t nv = vt.shape[1]
    cdef Py_ssize_t p, q, i
    cdef double alpha, beta, gamma, zeta, t, c, s, xp, xq
    cdef int sweeps = 0
    cdef bint rotated
    with nogil:
        while sweeps < max_sweeps:
            sweeps += 1
            rotated = False
            for p in range(n - 1):
                for q in range(p + 1, n):
                    alpha = 0.0
                    beta = 0.0
                    gamma = 0.0
                    for i in range(m):
                        xp = at[p, i]
                        xq = at[q, i]
                        alpha += xp * xp
                        beta += xq * xq
                        gamma += xp * xq
                    if alpha == 0.0 or beta == 0.0:
                        continue
                    if fabs(gamma) <= tol * sqrt(alpha * beta):
                        continue
                    rotated = True
                    zeta = (beta - alpha) / (2.0 * gamma)
                    t = copysign(1.0, zeta) / (fabs(zeta) + sqrt(1.0 + zeta * zeta))
                    c = 1.0 / sqrt(1.0 + t * t)
                    s = c * t
                    for i in range(m):
                        xp = at[p, i]
                        xq = at[q, i]
                        at[p, i] = c * xp - s * xq
                        at[q, i] = s * xp + c * xq
                    for i in range(nv):
                        xp = vt[p, i]
                        xq = vt[q, i]
                        vt[p, i] = c * xp - s * xq
                        vt[q, i] = s * xp + c * xq
            if not rotated:
                break
    return sweeps


cdef struct Net:
    int nl
    int* rows
    int* cols
    int* relu
    double** w
    double** b
    double** h       # post-activation outputs, one buffer per layer
    unsigned char** mask


cdef void _forward(Net* net, const double* x) noexcept nogil:
    # Row-major (rows, cols) weights read by BLAS as column-major (cols, rows).
    cdef int l, r, nr, nc, one = 1
    cdef double alpha = 1.0, beta = 1.0
    cdef char trans = b'T'
    cdef double* src = <double*> x
    cdef double* h
    for l in range(net.nl):
        nr = net.rows[l]
        nc = net.cols[l]
        h = net.h[l]
        memcpy(h, net.b[l], nr * sizeof(double))
        dgemv(&trans, &nc, &nr, &alpha, net.w[l], &nc, src, &one, &beta, h, &one)
        for r in range(nr):
            if net.relu[l] and not h[r] > 0.0:
                net.mask[l][r] = 0
                h[r] = 0.0
            else:
                net.mask[l][r] = 1
        src = h


cdef int _argmax(const double* f, int n) noexcept nogil:
    cdef int j, best = 0
    for j in range(1, n):
        if f[j] > f[best]:
            best = j
    return best


cdef double* _jacobian(Net* net, double* buf_a, double* buf_b) noexcept nogil:
    # Rows of the result are d logit_r / dx; returns whichever buffer holds it.
    cdef int l = net.nl - 1
    cdef int C = net.rows[l]
    cdef int r, j, k, nc, nr
    cdef double alpha = 1.0, beta = 0.0
    cdef char no = b'N'
    cdef double* cur = buf_a
    cdef double* nxt = buf_b
    cdef double* tmp
    cdef double* w
    nc = net.cols[l]
    w = net.w[l]
    for r in range(C):
        for k in range(nc):
            cur[r * nc + k] = w[r * nc + k] if net.mask[l][r] else 0.0
    for l in range(net.nl - 2, -1, -1):
        nr = net.rows[l]
        nc = net.cols[l]
        for r in range(C):
            for j in range(nr):
                if not net.mask[l][j]:
                    cur[r * nr + j] = 0.0
        # nxt (C, nc) = cur (C, nr) @ w (nr, nc), all row-major
        dgemm(&no, &no, &nc, &C, &nr, &alpha, net.w[l], &nc, cur, &nr, &beta, nxt, &nc)
        tmp = cur
        cur = nxt
        nxt = tmp
    return cur


def deepfool_loop(list weights, list biases, list relu, x, int k0, int max_iter,
                  double overshoot, double rel_nudge, double abs_nudge):
    """Accumulated DeepFool perturbation (before overshoot scaling).

    Returns ``(r_tot, iterations, status)``; status 0 is normal termination,
    1 a non-finite gradient, 2 no class with a usable boundary.
    """
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t d = xv.shape[0]
    cdef Net net
    cdef int l, k, j, best, it = 0, status = 0, current, C, maxw = 0
    cdef double[:, ::1] wmv
    cdef double[::1] bmv
    cdef double gap, nrm, ratio, best_ratio, step, s
    cdef double* jac
    cdef double* f = NULL
    r_out = np.zeros(d, dtype=np.float64)
    cdef double[::1] r = r_out
    keep = []

    net.nl = len(weights)
    net.rows = <int*> malloc(net.nl * sizeof(int))
    net.cols = <int*> malloc(net.nl * sizeof(int))
    net.relu = <int*> malloc(net.nl * sizeof(int))
    net.w = <double**> malloc(net.nl * sizeof(double*))
    net.b = <double**> malloc(net.nl * sizeof(double*))
    net.h = <double**> calloc(net.nl, sizeof(double*))
    net.mask = <unsigned char**> calloc(net.nl, sizeof(unsigned char*))
    cdef double* xt = <double*> malloc(d * sizeof(double))
    cdef double* wk = <double*> malloc(d * sizeof(double))
    cdef double* buf_a = NULL
    cdef double* buf_b = NULL
    try:
        for l in range(net.nl):
            wmv = np.ascontiguousarray(weights[l], dtype=np.float64)
            bmv = np.ascontiguousarray(biases[l], dtype=np.float64)
            keep.append((wmv, bmv))
            net.rows[l] = wmv.shape[0]
            net.cols[l] = wmv.shape[1]
            net.relu[l] = 1 if relu[l] else 0
            net.w[l] = &wmv[0, 0]
            net.b[l] = &bmv[0]
            net.h[l] = <double*> malloc(wmv.shape[0] * sizeof(double))
            net.mask[l] = <unsigned char*> malloc(wmv.shape[0])
            if wmv.shape[1] > maxw:
                maxw = wmv.shape[1]
            if wmv.shape[0] > maxw:
                maxw = wmv.shape[0]
        C = net.rows[net.nl - 1]
        buf_a = <double*> malloc(C * maxw * sizeof(double))
        buf_b = <double*> malloc(C * maxw * sizeof(double))
        f = <double*> malloc(C * sizeof(double))
        with nogil:
            _forward(&net, &xv[0])
            current = _argmax(net.h[net.nl - 1], C)
            while current == k0 and it < max_iter:
                for k in range(d):
                    xt[k] = xv[k] + r[k]
                _forward(&net, xt)
                for k in range(C):
                    f[k] = net.h[net.nl - 1][k]
                jac = _jacobian(&net, buf_a, buf_b)
                best = -1
                best_ratio = INFINITY
                for j in range(C):
                    if j == k0:
                        continue
                    nrm = 0.0
                    for k in range(d):
                        s = jac[j * d + k] - jac[k0 * d + k]
                        nrm += s * s
                    nrm = sqrt(nrm)
                    gap = f[j] - f[k0]
                    if not (isfinite(nrm) and isfinite(gap)):
                        status = 1
                        break
                    if nrm > 0.0:
                        ratio = fabs(gap) / nrm
                        if ratio < best_ratio:
                            best_ratio = ratio
                            best = j
                if status:
                    break
                if best < 0:
                    status = 2
                    break
                nrm = 0.0
                for k in range(d):
                    wk[k] = jac[best * d + k] - jac[k0 * d + k]
                    nrm += wk[k] * wk[k]
                nrm = sqrt(nrm)
                step = (best_ratio * (1.0 + rel_nudge) + abs_nudge) / nrm
                for k in range(d):
                    r[k] = r[k] + step * wk[k]
                it += 1
                for k in range(d):
                    xt[k] = xv[k] + (1.0 + overshoot) * r[k]
                _forward(&net, xt)
                current = _argmax(net.h[net.nl - 1], C)
    finally:
        for l in range(net.nl):
            free(net.h[l])
            free(net.mask[l])
        free(net.rows); free(net.cols); free(net.relu)
        free(net.w); free(net.b); free(net.h); free(net.mask)
        free(xt); free(wk); free(buf_a); free(buf_b); free(f)
    return r_out, it, status

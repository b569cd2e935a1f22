# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled network forward/backward kernels.

Implements the same contract as `_kernels_py` (see its docstring) with the
affine accumulations in C. The matrices involved are tiny (at most ~16x16),
where per-call overhead dominates numpy's runtime; fusing the module/layer
loops into C is what buys the speedup, not a faster matmul. The dot products
use four independent accumulators so the FP dependency chain does not bind
the loop; the summation order is fixed, keeping results deterministic.
Activation functions go through numpy's vectorized tanh, so hidden-layer
values agree bit-for-bit with the fallback backend.
"""

import numpy as np

NAME = "compiled"


cdef inline double _dot(const double* w, const double* a, Py_ssize_t n) noexcept nogil:
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t k = 0
    while k + 4 <= n:
        s0 += w[k] * a[k]
        s1 += w[k + 1] * a[k + 1]
        s2 += w[k + 2] * a[k + 2]
        s3 += w[k + 3] * a[k + 3]
        k += 4
    while k < n:
        s0 += w[k] * a[k]
        k += 1
    return (s0 + s1) + (s2 + s3)


cdef void _affine(const double[:, ::1] a, const double[:, ::1] w,
                  const double[::1] b, double[:, ::1] z, bint first) noexcept nogil:
    # z = a @ w.T + b  (first) or z += a @ w.T + b (accumulate)
    cdef Py_ssize_t nb = a.shape[0], nin = a.shape[1], nout = w.shape[0]
    cdef Py_ssize_t i, j
    cdef const double* ai
    for i in range(nb):
        ai = &a[i, 0]
        if first:
            for j in range(nout):
                z[i, j] = b[j] + _dot(&w[j, 0], ai, nin)
        else:
            for j in range(nout):
                z[i, j] += b[j] + _dot(&w[j, 0], ai, nin)


cdef void _outer_sum(const double[:, ::1] delta, const double[:, ::1] a,
                     double[:, ::1] g) noexcept nogil:
    # g[j, k] = sum_i delta[i, j] * a[i, k]
    cdef Py_ssize_t nb = delta.shape[0], nout = delta.shape[1], nin = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double d
    cdef double* grow
    cdef const double* ai
    for j in range(nout):
        grow = &g[j, 0]
        for k in range(nin):
            grow[k] = 0.0
    for i in range(nb):
        ai = &a[i, 0]
        for j in range(nout):
            d = delta[i, j]
            grow = &g[j, 0]
            for k in range(nin):
                grow[k] += d * ai[k]


cdef void _col_sum(const double[:, ::1] delta, double[::1] g) noexcept nogil:
    cdef Py_ssize_t i, j
    for j in range(delta.shape[1]):
        g[j] = 0.0
    for i in range(delta.shape[0]):
        for j in range(delta.shape[1]):
            g[j] += delta[i, j]


cdef void _prop_delta(const double[:, ::1] delta, const double[:, ::1] w,
                      const double[:, ::1] h, double[:, ::1] out) noexcept nogil:
    # out[i, k] = (sum_j delta[i, j] * w[j, k]) * (1 - h[i, k]^2)
    cdef Py_ssize_t nb = delta.shape[0], nout = delta.shape[1], nin = w.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double d
    cdef double* orow
    cdef const double* wrow
    cdef const double* hrow
    for i in range(nb):
        orow = &out[i, 0]
        for k in range(nin):
            orow[k] = 0.0
        for j in range(nout):
            d = delta[i, j]
            wrow = &w[j, 0]
            for k in range(nin):
                orow[k] += d * wrow[k]
        hrow = &h[i, 0]
        for k in range(nin):
            orow[k] *= 1.0 - hrow[k] * hrow[k]


def forward_batch(x, list weights, list biases, list laterals):
    cdef Py_ssize_t n_modules = len(weights)
    cdef Py_ssize_t n_layers = len(weights[0])
    cdef Py_ssize_t li, m, nb = x.shape[0]
    cdef list acts = [[x] for _ in range(n_modules)]
    cdef list prev
    cdef object w, z
    for li in range(n_layers):
        prev = [acts[m][li] for m in range(n_modules)]
        for m in range(n_modules):
            w = weights[m][li]
            z = np.empty((nb, (<object> w).shape[0]), dtype=np.float64)
            _affine(prev[m], w, biases[m][li], z, True)
            for src, u, ub in laterals[m][li]:
                _affine(prev[src], u, ub, z, False)
            if li < n_layers - 1:
                np.tanh(z, out=z)
            acts[m].append(z)
    return acts


def backward_batch(list acts, list weights, list laterals, Py_ssize_t active, out_grad):
    cdef Py_ssize_t n_layers = len(weights[active])
    cdef list gw = [None] * n_layers
    cdef list gb = [None] * n_layers
    cdef list glat = [[] for _ in range(n_layers)]
    cdef Py_ssize_t li
    cdef object w, a_prev, gwa, gba, gu, nxt
    delta = np.ascontiguousarray(out_grad, dtype=np.float64)
    for li in range(n_layers - 1, -1, -1):
        a_prev = acts[active][li]
        w = weights[active][li]
        gwa = np.empty(((<object> w).shape[0], (<object> w).shape[1]), dtype=np.float64)
        gba = np.empty((<object> w).shape[0], dtype=np.float64)
        _outer_sum(delta, a_prev, gwa)
        _col_sum(delta, gba)
        gw[li] = gwa
        gb[li] = gba
        for src, u, ub in laterals[active][li]:
            gu = np.empty(((<object> u).shape[0], (<object> u).shape[1]), dtype=np.float64)
            _outer_sum(delta, acts[src][li], gu)
            glat[li].append((gu, gba.copy()))
        if li > 0:
            nxt = np.empty((delta.shape[0], (<object> w).shape[1]), dtype=np.float64)
            _prop_delta(delta, w, acts[active][li], nxt)
            delta = nxt
    return gw, gb, glat

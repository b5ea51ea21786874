# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the certificate network.

Same contract and parameter layout as ``_fallback``.  Samples are processed
one at a time and accumulated in input order, so results are reproducible
bit for bit.
"""
import numpy as np
from libc.math cimport tanh


cdef inline void _offsets(int p, int h, Py_ssize_t* off):
    cdef int q = 2 * p * p
    off[0] = 0                   # W1
    off[1] = off[0] + h * p      # b1
    off[2] = off[1] + h          # W2
    off[3] = off[2] + h * h      # b2
    off[4] = off[3] + h          # W3
    off[5] = off[4] + q * h      # b3


def value_and_grad(const double[::1] theta, int p, int h, const double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0]
    cdef int q = 2 * p * p
    cdef int r2p = 2 * p
    cdef Py_ssize_t off[6]
    _offsets(p, h, off)
    cdef const double* th = &theta[0]
    cdef const double* W1 = th + off[0]
    cdef const double* b1 = th + off[1]
    cdef const double* W2 = th + off[2]
    cdef const double* b2 = th + off[3]
    cdef const double* W3 = th + off[4]
    cdef const double* b3 = th + off[5]

    V_arr = np.empty(n)
    G_arr = np.empty((n, p))
    cdef double[::1] V = V_arr
    cdef double[:, ::1] G = G_arr
    cdef double[::1] a1 = np.empty(h)
    cdef double[::1] a2 = np.empty(h)
    cdef double[::1] d1 = np.empty(h)
    cdef double[::1] d2 = np.empty(h)
    cdef double[::1] L = np.empty(q)
    cdef double[::1] y = np.empty(r2p)

    cdef Py_ssize_t s, i, j, k, r
    cdef double acc, v
    for s in range(n):
        for j in range(h):
            acc = b1[j]
            for k in range(p):
                acc += W1[j * p + k] * X[s, k]
            a1[j] = tanh(acc)
        for j in range(h):
            acc = b2[j]
            for k in range(h):
                acc += W2[j * h + k] * a1[k]
            a2[j] = tanh(acc)
        for r in range(q):
            acc = b3[r]
            for j in range(h):
                acc += W3[r * h + j] * a2[j]
            L[r] = acc
        v = 0.0
        for k in range(p):
            v += X[s, k] * X[s, k]
        for i in range(r2p):
            acc = 0.0
            for j in range(p):
                acc += L[i * p + j] * X[s, j]
            y[i] = acc
            v += acc * acc
        V[s] = v
        # d2 = (W3^T vec(y x^T)) * (1 - a2^2), row-major sweeps over W3 and W2
        for j in range(h):
            d2[j] = 0.0
        for i in range(r2p):
            for k in range(p):
                v = y[i] * X[s, k]
                r = (i * p + k) * h
                for j in range(h):
                    d2[j] += W3[r + j] * v
        for j in range(h):
            d2[j] *= 1.0 - a2[j] * a2[j]
            d1[j] = 0.0
        for j in range(h):
            for k in range(h):
                d1[k] += d2[j] * W2[j * h + k]
        for k in range(h):
            d1[k] *= 1.0 - a1[k] * a1[k]
        for k in range(p):
            acc = 0.0
            for i in range(r2p):
                acc += L[i * p + k] * y[i]
            v = 0.0
            for j in range(h):
                v += d1[j] * W1[j * p + k]
            G[s, k] = 2.0 * X[s, k] + 2.0 * acc + 2.0 * v
    return V_arr, G_arr


def loss_and_grad(const double[::1] theta, int p, int h, const double[:, ::1] X,
                  const double[:, ::1] U, double eta):
    cdef Py_ssize_t n = X.shape[0]
    cdef int q = 2 * p * p
    cdef int r2p = 2 * p
    cdef Py_ssize_t off[6]
    _offsets(p, h, off)
    cdef const double* th = &theta[0]
    cdef const double* W1 = th + off[0]
    cdef const double* b1 = th + off[1]
    cdef const double* W2 = th + off[2]
    cdef const double* b2 = th + off[3]
    cdef const double* W3 = th + off[4]
    cdef const double* b3 = th + off[5]

    grad_arr = np.zeros(theta.shape[0])
    cdef double[::1] grad = grad_arr
    cdef double* gW1 = &grad[0] + off[0]
    cdef double* gb1 = &grad[0] + off[1]
    cdef double* gW2 = &grad[0] + off[2]
    cdef double* gb2 = &grad[0] + off[3]
    cdef double* gW3 = &grad[0] + off[4]
    cdef double* gb3 = &grad[0] + off[5]

    cdef double[::1] a1 = np.empty(h)
    cdef double[::1] s1 = np.empty(h)
    cdef double[::1] t1 = np.empty(h)
    cdef double[::1] ta1 = np.empty(h)
    cdef double[::1] a2 = np.empty(h)
    cdef double[::1] s2 = np.empty(h)
    cdef double[::1] t2 = np.empty(h)
    cdef double[::1] ta2 = np.empty(h)
    cdef double[::1] L = np.empty(q)
    cdef double[::1] Ld = np.empty(q)
    cdef double[::1] y = np.empty(r2p)
    cdef double[::1] yd = np.empty(r2p)
    cdef double[::1] go = np.empty(q)
    cdef double[::1] god = np.empty(q)
    cdef double[::1] gz2 = np.empty(h)
    cdef double[::1] gt2 = np.empty(h)
    cdef double[::1] gz1 = np.empty(h)
    cdef double[::1] gt1 = np.empty(h)

    cdef Py_ssize_t s, i, j, k, r
    cdef double acc, acc2, val, gy, loss = 0.0
    for s in range(n):
        # primal and tangent (direction U[s]) forward passes
        for j in range(h):
            acc = b1[j]
            acc2 = 0.0
            for k in range(p):
                acc += W1[j * p + k] * X[s, k]
                acc2 += W1[j * p + k] * U[s, k]
            a1[j] = tanh(acc)
            s1[j] = 1.0 - a1[j] * a1[j]
            t1[j] = acc2
            ta1[j] = s1[j] * acc2
        for j in range(h):
            acc = b2[j]
            acc2 = 0.0
            for k in range(h):
                acc += W2[j * h + k] * a1[k]
                acc2 += W2[j * h + k] * ta1[k]
            a2[j] = tanh(acc)
            s2[j] = 1.0 - a2[j] * a2[j]
            t2[j] = acc2
            ta2[j] = s2[j] * acc2
        for r in range(q):
            acc = b3[r]
            acc2 = 0.0
            for j in range(h):
                acc += W3[r * h + j] * a2[j]
                acc2 += W3[r * h + j] * ta2[j]
            L[r] = acc
            Ld[r] = acc2
        val = 0.0
        acc2 = 0.0
        for k in range(p):
            val += X[s, k] * U[s, k]
            acc2 += X[s, k] * X[s, k]
        val = 2.0 * val + eta * acc2
        for i in range(r2p):
            acc = 0.0
            acc2 = 0.0
            for j in range(p):
                acc += L[i * p + j] * X[s, j]
                acc2 += L[i * p + j] * U[s, j] + Ld[i * p + j] * X[s, j]
            y[i] = acc
            yd[i] = acc2
        for i in range(r2p):
            val += 2.0 * y[i] * yd[i] + eta * y[i] * y[i]
        if not val > 0.0:
            continue
        loss += val

        # reverse sweep over primal and tangent paths
        for i in range(r2p):
            gy = 2.0 * yd[i] + 2.0 * eta * y[i]
            for j in range(p):
                go[i * p + j] = gy * X[s, j] + 2.0 * y[i] * U[s, j]
                god[i * p + j] = 2.0 * y[i] * X[s, j]
        # gz2/gt2 first hold W3^T go and W3^T god
        for j in range(h):
            gz2[j] = 0.0
            gt2[j] = 0.0
        for r in range(q):
            gb3[r] += go[r]
            for j in range(h):
                gW3[r * h + j] += go[r] * a2[j] + god[r] * ta2[j]
                gz2[j] += go[r] * W3[r * h + j]
                gt2[j] += god[r] * W3[r * h + j]
        for j in range(h):
            gz2[j] = s2[j] * (gz2[j] - 2.0 * a2[j] * t2[j] * gt2[j])
            gt2[j] = s2[j] * gt2[j]
            gz1[j] = 0.0
            gt1[j] = 0.0
        for j in range(h):
            gb2[j] += gz2[j]
            for k in range(h):
                gW2[j * h + k] += gz2[j] * a1[k] + gt2[j] * ta1[k]
                gz1[k] += gz2[j] * W2[j * h + k]
                gt1[k] += gt2[j] * W2[j * h + k]
        for k in range(h):
            gz1[k] = s1[k] * (gz1[k] - 2.0 * a1[k] * t1[k] * gt1[k])
            gt1[k] = s1[k] * gt1[k]
        for j in range(h):
            gb1[j] += gz1[j]
            for k in range(p):
                gW1[j * p + k] += gz1[j] * X[s, k] + gt1[j] * U[s, k]
    return loss, grad_arr

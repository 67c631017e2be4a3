# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Same contracts as ``_pykernels``."""
import numpy as np
from libc.math cimport sqrt, pow
from scipy.linalg.cython_blas cimport dgemm


def sliding_extrema(const double[:, ::1] x, Py_ssize_t k, bint is_max):
    cdef Py_ssize_t b = x.shape[0], n = x.shape[1]
    cdef Py_ssize_t m = n - k + 1
    vals = np.empty((b, m), dtype=np.float64)
    idx = np.empty((b, m), dtype=np.int64)
    cdef double[:, ::1] vv = vals
    cdef long long[:, ::1] iv = idx
    # monotonic deque of indices; strict comparison keeps the earliest tie at the front
    cdef long long[::1] dq = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t r, i, head, tail
    cdef double xi
    with nogil:
        for r in range(b):
            head = 0
            tail = 0
            for i in range(n):
                xi = x[r, i]
                if is_max:
                    while tail > head and x[r, dq[tail - 1]] < xi:
                        tail -= 1
                else:
                    while tail > head and x[r, dq[tail - 1]] > xi:
                        tail -= 1
                dq[tail] = i
                tail += 1
                if dq[head] <= i - k:
                    head += 1
                if i >= k - 1:
                    iv[r, i - k + 1] = dq[head]
                    vv[r, i - k + 1] = x[r, dq[head]]
    return vals, idx


cdef void _gemm(char ta, char tb, int m, int n, int k, const double *a, int lda,
                const double *b, int ldb, double beta, double *c, int ldc) noexcept nogil:
    # row-major C = op(A) op(B) expressed as the column-major C^T = op(B)^T op(A)^T
    cdef double one = 1.0
    dgemm(&tb, &ta, &n, &m, &k, &one, <double *>b, &ldb, <double *>a, &lda, &beta, c, &ldc)


cdef void _forward(const double[:, ::1] x, const double[:, ::1] w1,
                   const double[:, ::1] w2, bint relu, double[:, ::1] pre,
                   double[:, ::1] h, double[:, ::1] q) noexcept nogil:
    cdef int b = x.shape[0], d = x.shape[1], nh = w1.shape[0], na = w2.shape[0]
    cdef Py_ssize_t r, j
    cdef double v
    _gemm(b'N', b'T', b, nh, d, &x[0, 0], d, &w1[0, 0], d, 0.0, &pre[0, 0], nh)
    for r in range(b):
        for j in range(nh):
            v = pre[r, j]
            h[r, j] = 0.0 if relu and v < 0.0 else v
    _gemm(b'N', b'T', b, na, nh, &h[0, 0], nh, &w2[0, 0], nh, 0.0, &q[0, 0], na)


def qnet_forward(const double[:, ::1] x, const double[:, ::1] w1,
                 const double[:, ::1] w2, bint relu):
    cdef Py_ssize_t b = x.shape[0], nh = w1.shape[0], na = w2.shape[0]
    if x.shape[1] != w1.shape[1] or w2.shape[1] != nh:
        raise ValueError("shape mismatch between x, w1 and w2")
    pre_a = np.empty((b, nh), dtype=np.float64)
    h_a = np.empty((b, nh), dtype=np.float64)
    q_a = np.empty((b, na), dtype=np.float64)
    cdef double[:, ::1] pre = pre_a, h = h_a, q = q_a
    if b:
        with nogil:
            _forward(x, w1, w2, relu, pre, h, q)
    return pre_a, h_a, q_a


def qnet_loss_grad(const double[:, ::1] x, const long long[::1] actions,
                   const double[::1] targets, const double[:, ::1] w1,
                   const double[:, ::1] w2, bint relu):
    """Forward, squared TD error on the taken actions and both weight
    gradients in one call; the two dense products go through BLAS."""
    cdef Py_ssize_t b = x.shape[0], d = x.shape[1], nh = w1.shape[0], na = w2.shape[0]
    if b == 0 or d != w1.shape[1] or w2.shape[1] != nh:
        raise ValueError("shape mismatch between x, w1 and w2")
    pre_a = np.empty((b, nh), dtype=np.float64)
    h_a = np.empty((b, nh), dtype=np.float64)
    q_a = np.empty((b, na), dtype=np.float64)
    dpre_a = np.empty((b, nh), dtype=np.float64)
    gw1_a = np.empty((nh, d), dtype=np.float64)
    gw2_a = np.zeros((na, nh), dtype=np.float64)
    cdef double[:, ::1] pre = pre_a, h = h_a, q = q_a, dpre = dpre_a
    cdef double[:, ::1] gw1 = gw1_a, gw2 = gw2_a
    cdef Py_ssize_t r, j, a
    cdef double err, dq, loss = 0.0
    with nogil:
        _forward(x, w1, w2, relu, pre, h, q)
        # the output gradient is one-hot per row, so its products are plain loops
        for r in range(b):
            a = actions[r]
            err = q[r, a] - targets[r]
            loss += err * err
            dq = (2.0 / b) * err
            for j in range(nh):
                gw2[a, j] += dq * h[r, j]
                if relu and not pre[r, j] > 0.0:
                    dpre[r, j] = 0.0
                else:
                    dpre[r, j] = dq * w2[a, j]
        _gemm(b'T', b'N', <int>nh, <int>d, <int>b, &dpre[0, 0], <int>nh, &x[0, 0], <int>d,
              0.0, &gw1[0, 0], <int>d)
    return loss / b, gw1_a, gw2_a


def adam_update(double[::1] w, const double[::1] g, double[::1] m, double[::1] v,
                long long step, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t i, n = w.shape[0]
    cdef double c1 = 1.0 - pow(beta1, <double>step)
    cdef double c2 = 1.0 - pow(beta2, <double>step)
    with nogil:
        for i in range(n):
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
            v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i])
            w[i] -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps)

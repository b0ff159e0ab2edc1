# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: im2col convolution on BLAS dgemm, and cyclic Jacobi.

Same signatures and semantics as ``hwnas.nn._fallback``.
"""
import numpy as np

from libc.math cimport fabs, sqrt
from scipy.linalg.cython_blas cimport dgemm


cdef inline int _out(int n, int k, int stride, int pad) noexcept nogil:
    return (n + 2 * pad - k) // stride + 1


cdef void _im2col(const double* x, int C, int H, int W, int k, int stride, int pad,
                  int ho, int wo, double* cols) noexcept nogil:
    # cols is row-major (C*k*k, ho*wo)
    cdef int c, i, j, oh, ow, ih, iw
    cdef Py_ssize_t row, P = ho * wo
    cdef const double* xc
    cdef double* dst
    for c in range(C):
        xc = x + c * H * W
        for i in range(k):
            for j in range(k):
                row = (c * k + i) * k + j
                dst = cols + row * P
                for oh in range(ho):
                    ih = oh * stride - pad + i
                    if ih < 0 or ih >= H:
                        for ow in range(wo):
                            dst[oh * wo + ow] = 0.0
                        continue
                    for ow in range(wo):
                        iw = ow * stride - pad + j
                        if iw < 0 or iw >= W:
                            dst[oh * wo + ow] = 0.0
                        else:
                            dst[oh * wo + ow] = xc[ih * W + iw]


cdef void _col2im_add(const double* cols, int C, int H, int W, int k, int stride, int pad,
                      int ho, int wo, double* x) noexcept nogil:
    cdef int c, i, j, oh, ow, ih, iw
    cdef Py_ssize_t row, P = ho * wo
    cdef double* xc
    cdef const double* src
    for c in range(C):
        xc = x + c * H * W
        for i in range(k):
            for j in range(k):
                row = (c * k + i) * k + j
                src = cols + row * P
                for oh in range(ho):
                    ih = oh * stride - pad + i
                    if ih < 0 or ih >= H:
                        continue
                    for ow in range(wo):
                        iw = ow * stride - pad + j
                        if 0 <= iw < W:
                            xc[ih * W + iw] += src[oh * wo + ow]


def conv2d_forward(x, w, int stride, int pad):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3]
    cdef int O = wv.shape[0], k = wv.shape[2]
    cdef int ho = _out(H, k, stride, pad), wo = _out(W, k, stride, pad)
    cdef int P = ho * wo, CKK = C * k * k
    out = np.empty((N, O, ho, wo), dtype=np.float64)
    cdef double[:, :, :, ::1] yv = out
    cdef double[:, ::1] cols = np.empty((CKK, P), dtype=np.float64)
    cdef double one = 1.0, zero = 0.0
    cdef char tn = b'N'
    cdef int n
    with nogil:
        for n in range(N):
            _im2col(&xv[n, 0, 0, 0], C, H, W, k, stride, pad, ho, wo, &cols[0, 0])
            # row-major y(O,P) = w(O,CKK) @ cols(CKK,P)
            dgemm(&tn, &tn, &P, &O, &CKK, &one, &cols[0, 0], &P,
                  &wv[0, 0, 0, 0], &CKK, &zero, &yv[n, 0, 0, 0], &P)
    return out


def conv2d_backward_input(dy, w, in_hw, int stride, int pad):
    cdef double[:, :, :, ::1] dyv = np.ascontiguousarray(dy, dtype=np.float64)
    cdef double[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef int N = dyv.shape[0], O = dyv.shape[1], ho = dyv.shape[2], wo = dyv.shape[3]
    cdef int C = wv.shape[1], k = wv.shape[2]
    cdef int H = in_hw[0], W = in_hw[1]
    cdef int P = ho * wo, CKK = C * k * k
    out = np.zeros((N, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] dxv = out
    cdef double[:, ::1] dcols = np.empty((CKK, P), dtype=np.float64)
    cdef double one = 1.0, zero = 0.0
    cdef char tn = b'N', tt = b'T'
    cdef int n
    with nogil:
        for n in range(N):
            # row-major dcols(CKK,P) = w^T(CKK,O) @ dy(O,P)
            dgemm(&tn, &tt, &P, &CKK, &O, &one, &dyv[n, 0, 0, 0], &P,
                  &wv[0, 0, 0, 0], &CKK, &zero, &dcols[0, 0], &P)
            _col2im_add(&dcols[0, 0], C, H, W, k, stride, pad, ho, wo, &dxv[n, 0, 0, 0])
    return out


def conv2d_backward_weight(dy, x, int k, int stride, int pad):
    """Per-sample weight gradient, shape (N, O, C, k, k)."""
    cdef double[:, :, :, ::1] dyv = np.ascontiguousarray(dy, dtype=np.float64)
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3]
    cdef int O = dyv.shape[1], ho = dyv.shape[2], wo = dyv.shape[3]
    cdef int P = ho * wo, CKK = C * k * k
    out = np.empty((N, O, C, k, k), dtype=np.float64)
    cdef double[:, :, :, :, ::1] gv = out
    cdef double[:, ::1] cols = np.empty((CKK, P), dtype=np.float64)
    cdef double one = 1.0, zero = 0.0
    cdef char tn = b'N', tt = b'T'
    cdef int n
    with nogil:
        for n in range(N):
            _im2col(&xv[n, 0, 0, 0], C, H, W, k, stride, pad, ho, wo, &cols[0, 0])
            # row-major g(O,CKK) = dy(O,P) @ cols^T(P,CKK)
            dgemm(&tt, &tn, &CKK, &O, &P, &one, &cols[0, 0], &P,
                  &dyv[n, 0, 0, 0], &P, &zero, &gv[n, 0, 0, 0, 0], &CKK)
    return out


def jacobi_eigvalsh(a, double tol=1e-15, int max_sweeps=100):
    """Cyclic Jacobi eigenvalues of a symmetric matrix (unsorted) and sweeps used."""
    arr = np.array(a, dtype=np.float64, order="C", copy=True)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError("matrix must be square")
    cdef double[:, ::1] m = arr
    cdef int n = m.shape[0]
    cdef int p, q, r, sweep
    cdef double scale = 0.0, off, apq, theta, t, c, s, mp, mq
    for p in range(n):
        for q in range(n):
            scale += m[p, q] * m[p, q]
    scale = sqrt(scale)
    if n < 2 or scale == 0.0:
        return np.diag(arr).copy(), 0
    with nogil:
        for sweep in range(max_sweeps):
            off = 0.0
            for p in range(n):
                for q in range(n):
                    if p != q:
                        off += m[p, q] * m[p, q]
            if sqrt(off) <= tol * scale:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = m[p, q]
                    if apq == 0.0:
                        continue
                    theta = (m[q, q] - m[p, p]) / (2.0 * apq)
                    t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                    c = 1.0 / sqrt(t * t + 1.0)
                    s = t * c
                    for r in range(n):
                        mp = m[r, p]
                        mq = m[r, q]
                        m[r, p] = c * mp - s * mq
                        m[r, q] = s * mp + c * mq
                    for r in range(n):
                        mp = m[p, r]
                        mq = m[q, r]
                        m[p, r] = c * mp - s * mq
                        m[q, r] = s * mp + c * mq
                    m[p, q] = 0.0
                    m[q, p] = 0.0
        else:
            sweep = max_sweeps
    return np.diag(arr).copy(), sweep

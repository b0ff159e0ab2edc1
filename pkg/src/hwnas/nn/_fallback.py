"""NumPy implementations of the hot kernels.

Used when the compiled extension is unavailable or ``HWNAS_FORCE_PYTHON``
is set.  Signatures and results match :mod:`hwnas.nn._ckernels`.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]  # (N, C, Ho, Wo, k, k)


def _cols(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    win = _windows(x, k, stride, pad)
    n, c, ho, wo = win.shape[:4]
    # (N, Ho*Wo, C*k*k)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * k * k)


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    n = x.shape[0]
    o, _, k, _ = w.shape
    cols = _cols(x, k, stride, pad)
    ho = (x.shape[2] + 2 * pad - k) // stride + 1
    wo = (x.shape[3] + 2 * pad - k) // stride + 1
    y = cols @ w.reshape(o, -1).T  # (N, P, O)
    return np.ascontiguousarray(y.transpose(0, 2, 1)).reshape(n, o, ho, wo)


def conv2d_backward_input(
    dy: np.ndarray, w: np.ndarray, in_hw: tuple[int, int], stride: int, pad: int
) -> np.ndarray:
    n, o, ho, wo = dy.shape
    _, c, k, _ = w.shape
    h, wd = in_hw
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    for i in range(k):
        for j in range(k):
            contrib = np.einsum("nohw,oc->nchw", dy, w[:, :, i, j], optimize=True)
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += contrib
    if pad:
        return np.ascontiguousarray(dxp[:, :, pad:-pad, pad:-pad])
    return dxp


def conv2d_backward_weight(dy: np.ndarray, x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Per-sample weight gradient, shape (N, O, C, k, k)."""
    n, o = dy.shape[:2]
    c = x.shape[1]
    cols = _cols(x, k, stride, pad)
    g = dy.reshape(n, o, -1) @ cols
    return g.reshape(n, o, c, k, k)


def jacobi_eigvalsh(a: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100) -> tuple[np.ndarray, int]:
    """Cyclic Jacobi eigenvalues of a symmetric matrix (unsorted) and sweeps used."""
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    scale = np.sqrt((a * a).sum())
    if n < 2 or scale == 0.0:
        return np.diag(a).copy(), 0
    offdiag = ~np.eye(n, dtype=bool)
    for sweep in range(max_sweeps):
        off = math.sqrt(float(np.square(a[offdiag]).sum()))
        if off <= tol * scale:
            return np.diag(a).copy(), sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = float(a[p, q])
                if apq == 0.0:
                    continue
                theta = (float(a[q, q]) - float(a[p, p])) / (2.0 * apq)
                if math.isinf(theta):
                    a[p, q] = a[q, p] = 0.0
                    continue
                t = 1.0 / (abs(theta) + math.hypot(theta, 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                colp = a[:, p].copy()
                colq = a[:, q]
                a[:, p] = c * colp - s * colq
                a[:, q] = s * colp + c * colq
                rowp = a[p, :].copy()
                rowq = a[q, :]
                a[p, :] = c * rowp - s * rowq
                a[q, :] = s * rowp + c * rowq
                a[p, q] = a[q, p] = 0.0
    return np.diag(a).copy(), max_sweeps

"""Forward pass, ReLU activation patterns and per-sample parameter gradients.

Tensors are float64 NumPy arrays with a leading batch axis.  Samples never
interact (BatchNorm is a plain per-channel affine map), so a batched
backward pass yields exact per-sample gradients.
"""
from __future__ import annotations

import zlib
from typing import Callable, Optional

import numpy as np

from . import kernels
from .layers import (
    AvgPool,
    BatchNorm,
    Conv,
    GlobalAvgPool,
    Linear,
    NetworkSpec,
    ReLU,
    ShapeError,
    Sum,
    Zero,
)


def _layer_rng(seed: int, name: str) -> np.random.Generator:
    # keyed by layer name so a layer's init does not depend on what else is in the net
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def init_params(spec: NetworkSpec, seed: int) -> np.ndarray:
    """Kaiming-normal (fan-in) weights, zero biases, BatchNorm scale 1 / shift 0."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    theta = np.zeros(spec.param_count)
    for layer, off in zip(spec.layers, spec.offsets):
        op = layer.op
        if isinstance(op, (Conv, Linear)):
            n_w = op.fan_in * (op.out_features if isinstance(op, Linear) else op.c_out)
            std = np.sqrt(2.0 / op.fan_in)
            theta[off : off + n_w] = _layer_rng(seed, layer.name).normal(0.0, std, size=n_w)
        elif isinstance(op, BatchNorm):
            theta[off : off + op.c] = 1.0
    return theta


def _split(op, theta: np.ndarray, off: int):
    if isinstance(op, Conv):
        n_w = op.c_out * op.c_in * op.k * op.k
        w = theta[off : off + n_w].reshape(op.c_out, op.c_in, op.k, op.k)
        b = theta[off + n_w : off + n_w + op.c_out] if op.bias else None
        return w, b
    if isinstance(op, BatchNorm):
        return theta[off : off + op.c], theta[off + op.c : off + 2 * op.c]
    if isinstance(op, Linear):
        n_w = op.out_features * op.in_features
        w = theta[off : off + n_w].reshape(op.out_features, op.in_features)
        return w, theta[off + n_w : off + n_w + op.out_features]
    return None, None


def _pool_counts(h: int, w: int, op: AvgPool) -> np.ndarray:
    ones = np.zeros((h + 2 * op.pad, w + 2 * op.pad))
    ones[op.pad : op.pad + h, op.pad : op.pad + w] = 1.0
    ho = (h + 2 * op.pad - op.k) // op.stride + 1
    wo = (w + 2 * op.pad - op.k) // op.stride + 1
    counts = np.zeros((ho, wo))
    s = op.stride
    for i in range(op.k):
        for j in range(op.k):
            counts += ones[i : i + s * ho : s, j : j + s * wo : s]
    return counts


def _avgpool_forward(x: np.ndarray, op: AvgPool) -> np.ndarray:
    n, c, h, w = x.shape
    p, s, k = op.pad, op.stride, op.k
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    ho = (h + 2 * p - k) // s + 1
    wo = (w + 2 * p - k) // s + 1
    out = np.zeros((n, c, ho, wo))
    for i in range(k):
        for j in range(k):
            out += xp[:, :, i : i + s * ho : s, j : j + s * wo : s]
    return out / _pool_counts(h, w, op)


def _avgpool_backward(g: np.ndarray, in_shape: tuple[int, ...], op: AvgPool) -> np.ndarray:
    _, h, w = in_shape
    p, s, k = op.pad, op.stride, op.k
    n, c, ho, wo = g.shape
    g = g / _pool_counts(h, w, op)
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += g
    return dxp[:, :, p : p + h, p : p + w] if p else dxp


def _as_batch(spec: NetworkSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape == spec.input_shape:
        return x[None], True
    if x.ndim == len(spec.input_shape) + 1 and x.shape[1:] == spec.input_shape:
        return x, False
    raise ShapeError(f"input shape {x.shape} does not match network input {spec.input_shape}")


def _run(spec: NetworkSpec, theta: np.ndarray, x: np.ndarray, want_pattern: bool):
    if theta.shape != (spec.param_count,):
        raise ShapeError(f"parameter vector has length {theta.size}, expected {spec.param_count}")
    n = x.shape[0]
    outs: list[np.ndarray] = []
    bits = []

    def get(j: int) -> np.ndarray:
        return x if j == -1 else outs[j]

    for layer, off in zip(spec.layers, spec.offsets):
        op = layer.op
        if isinstance(op, Conv):
            w, b = _split(op, theta, off)
            y = kernels.conv2d_forward(get(layer.inputs[0]), w, op.stride, op.pad)
            if b is not None:
                y += b[None, :, None, None]
        elif isinstance(op, BatchNorm):
            gamma, beta = _split(op, theta, off)
            src = get(layer.inputs[0])
            shape = (1, op.c) + (1,) * (src.ndim - 2)
            y = src * gamma.reshape(shape) + beta.reshape(shape)
        elif isinstance(op, ReLU):
            src = get(layer.inputs[0])
            on = src > 0.0
            if want_pattern:
                bits.append(on.reshape(n, -1))
            y = np.where(on, src, 0.0)
        elif isinstance(op, AvgPool):
            y = _avgpool_forward(get(layer.inputs[0]), op)
        elif isinstance(op, GlobalAvgPool):
            y = get(layer.inputs[0]).mean(axis=(2, 3))
        elif isinstance(op, Linear):
            w, b = _split(op, theta, off)
            y = get(layer.inputs[0]) @ w.T + b
        elif isinstance(op, Sum):
            y = get(layer.inputs[0]).copy()
            for j in layer.inputs[1:]:
                y += get(j)
        elif isinstance(op, Zero):
            y = np.zeros((n,) + tuple(op.shape))
        else:  # pragma: no cover - NetworkSpec rejects unknown layers
            raise ShapeError(f"unsupported layer {layer.name}")
        outs.append(y)
    if want_pattern:
        pattern = np.concatenate(bits, axis=1) if bits else np.zeros((n, 0), dtype=bool)
    else:
        pattern = None
    return outs, pattern


def forward(spec: NetworkSpec, params: np.ndarray, x) -> tuple[np.ndarray, np.ndarray]:
    """Logits and ReLU sign pattern (one bool per ReLU unit, True iff pre-activation > 0).

    ``x`` is one sample of shape ``spec.input_shape`` or a batch with a leading axis.
    """
    xb, single = _as_batch(spec, x)
    outs, pattern = _run(spec, np.asarray(params, dtype=np.float64), xb, True)
    if single:
        return outs[-1][0], pattern[0]
    return outs[-1], pattern


def activation_patterns(spec: NetworkSpec, params: np.ndarray, x) -> np.ndarray:
    return forward(spec, params, x)[1]


ParamGradSink = Callable[[int, np.ndarray], None]


def _backward(spec: NetworkSpec, theta: np.ndarray, x: np.ndarray, outs: list[np.ndarray], sink: ParamGradSink):
    """Reverse sweep for g = sum of logits; ``sink(offset, (N, p) grads)`` per param layer."""
    n = x.shape[0]
    grads: list[Optional[np.ndarray]] = [None] * len(spec.layers)
    grads[-1] = np.ones_like(outs[-1])

    def get(j: int) -> np.ndarray:
        return x if j == -1 else outs[j]

    def push(j: int, g: np.ndarray) -> None:
        if j == -1:
            return
        if grads[j] is None:
            grads[j] = g
        else:
            grads[j] = grads[j] + g

    for i in range(len(spec.layers) - 1, -1, -1):
        g = grads[i]
        grads[i] = None
        layer = spec.layers[i]
        op = layer.op
        off = spec.offsets[i]
        if g is None:
            continue  # no path to the output: parameter gradient stays zero
        if isinstance(op, Conv):
            w, _ = _split(op, theta, off)
            src = get(layer.inputs[0])
            gw = kernels.conv2d_backward_weight(g, src, op.k, op.stride, op.pad)
            if op.bias:
                sink(off, np.concatenate([gw.reshape(n, -1), g.sum(axis=(2, 3))], axis=1))
            else:
                sink(off, gw.reshape(n, -1))
            if layer.inputs[0] != -1:
                push(layer.inputs[0], kernels.conv2d_backward_input(g, w, src.shape[2:], op.stride, op.pad))
        elif isinstance(op, BatchNorm):
            gamma, _ = _split(op, theta, off)
            src = get(layer.inputs[0])
            axes = tuple(range(2, src.ndim))
            sink(off, np.concatenate([(g * src).sum(axis=axes), g.sum(axis=axes)], axis=1))
            shape = (1, op.c) + (1,) * (src.ndim - 2)
            push(layer.inputs[0], g * gamma.reshape(shape))
        elif isinstance(op, ReLU):
            # subgradient at exactly 0 is 0
            push(layer.inputs[0], np.where(get(layer.inputs[0]) > 0.0, g, 0.0))
        elif isinstance(op, AvgPool):
            push(layer.inputs[0], _avgpool_backward(g, spec.input_shape_of(i), op))
        elif isinstance(op, GlobalAvgPool):
            c, h, w = spec.input_shape_of(i)
            push(layer.inputs[0], np.broadcast_to((g / (h * w))[:, :, None, None], (n, c, h, w)))
        elif isinstance(op, Linear):
            w, _ = _split(op, theta, off)
            src = get(layer.inputs[0])
            gw = g[:, :, None] * src[:, None, :]
            sink(off, np.concatenate([gw.reshape(n, -1), g], axis=1))
            push(layer.inputs[0], g @ w)
        elif isinstance(op, Sum):
            for j in layer.inputs:
                push(j, g)
        # Zero: no inputs, no parameters


def param_gradient(spec: NetworkSpec, params: np.ndarray, x) -> np.ndarray:
    """d(sum of logits)/d(params) in ``ParamVector`` order; (P,) for one sample, (N, P) for a batch."""
    xb, single = _as_batch(spec, x)
    theta = np.asarray(params, dtype=np.float64)
    outs, _ = _run(spec, theta, xb, False)
    jac = np.zeros((xb.shape[0], spec.param_count))

    def sink(off: int, g: np.ndarray) -> None:
        jac[:, off : off + g.shape[1]] = g

    _backward(spec, theta, xb, outs, sink)
    return jac[0] if single else jac


def ntk_gram(spec: NetworkSpec, params: np.ndarray, batch) -> np.ndarray:
    """Finite-width NTK Gram J J^T for the scalar output sum of logits.

    Accumulated layer by layer, so the full Jacobian is never materialised.
    """
    xb, _ = _as_batch(spec, batch)
    theta = np.asarray(params, dtype=np.float64)
    outs, _ = _run(spec, theta, xb, False)
    gram = np.zeros((xb.shape[0], xb.shape[0]))

    def sink(off: int, g: np.ndarray) -> None:
        nonlocal gram
        gram += g @ g.T

    _backward(spec, theta, xb, outs, sink)
    return 0.5 * (gram + gram.T)

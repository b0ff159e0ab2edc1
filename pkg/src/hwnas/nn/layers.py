"""Layer specifications and the flat network description.

A :class:`NetworkSpec` is an ordered list of :class:`Layer` records.  Each
layer names its inputs by position in that list (``-1`` is the network
input), so cells with arbitrary DAG wiring flatten into one sequence that
is evaluated front to back and differentiated back to front.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union


class ShapeError(ValueError):
    """Raised when shape inference fails (mismatch or spatial underflow)."""


def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


@dataclass(frozen=True)
class Conv:
    c_in: int
    c_out: int
    k: int
    stride: int = 1
    pad: int = 0
    bias: bool = False

    @property
    def param_count(self) -> int:
        return self.c_out * self.c_in * self.k * self.k + (self.c_out if self.bias else 0)

    @property
    def fan_in(self) -> int:
        return self.c_in * self.k * self.k


@dataclass(frozen=True)
class BatchNorm:
    """Affine per-channel scale and shift; no batch or running statistics."""

    c: int

    @property
    def param_count(self) -> int:
        return 2 * self.c


@dataclass(frozen=True)
class ReLU:
    param_count = 0


@dataclass(frozen=True)
class AvgPool:
    """Average pooling; padded positions are excluded from the divisor."""

    k: int
    stride: int = 1
    pad: int = 0
    param_count = 0


@dataclass(frozen=True)
class GlobalAvgPool:
    param_count = 0


@dataclass(frozen=True)
class Linear:
    in_features: int
    out_features: int

    @property
    def param_count(self) -> int:
        return self.out_features * self.in_features + self.out_features

    @property
    def fan_in(self) -> int:
        return self.in_features


@dataclass(frozen=True)
class Sum:
    """Elementwise sum of all inputs.

    ``counted`` decides whether the adds are charged by the FLOPs counter.
    """

    counted: bool = True
    param_count = 0


@dataclass(frozen=True)
class Zero:
    shape: tuple[int, int, int]
    param_count = 0


LayerOp = Union[Conv, BatchNorm, ReLU, AvgPool, GlobalAvgPool, Linear, Sum, Zero]


@dataclass(frozen=True)
class Layer:
    op: LayerOp
    inputs: tuple[int, ...]
    name: str


@dataclass(frozen=True)
class NetworkSpec:
    """Validated, shape-inferred network.

    ``shapes[i]`` is the per-sample output shape of layer ``i``; the last
    layer's output is the logits vector.
    """

    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...]
    shapes: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    offsets: tuple[int, ...] = field(init=False, repr=False, compare=False)
    param_count: int = field(init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        if not self.layers:
            raise ShapeError("empty network")
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ShapeError("layer names must be unique")
        shapes: list[tuple[int, ...]] = []
        offsets = []
        total = 0
        for i, layer in enumerate(self.layers):
            for j in layer.inputs:
                if not -1 <= j < i:
                    raise ShapeError(f"layer {layer.name} reads from {j}, not an earlier layer")
            in_shapes = [self.input_shape if j == -1 else shapes[j] for j in layer.inputs]
            shapes.append(_infer(layer, in_shapes))
            offsets.append(total)
            total += layer.op.param_count
        if len(shapes[-1]) != 1:
            raise ShapeError(f"network must end in a vector, got shape {shapes[-1]}")
        object.__setattr__(self, "shapes", tuple(shapes))
        object.__setattr__(self, "offsets", tuple(offsets))
        object.__setattr__(self, "param_count", total)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[-1]

    def input_shape_of(self, i: int, k: int = 0) -> tuple[int, ...]:
        j = self.layers[i].inputs[k]
        return self.input_shape if j == -1 else self.shapes[j]

    @property
    def relu_units(self) -> int:
        n = 0
        for layer, shape in zip(self.layers, self.shapes):
            if isinstance(layer.op, ReLU):
                p = 1
                for d in shape:
                    p *= d
                n += p
        return n


def _infer(layer: Layer, in_shapes: list[tuple[int, ...]]) -> tuple[int, ...]:
    op = layer.op
    name = layer.name

    def single() -> tuple[int, ...]:
        if len(in_shapes) != 1:
            raise ShapeError(f"{name}: expects exactly one input")
        return in_shapes[0]

    if isinstance(op, Zero):
        if in_shapes:
            raise ShapeError(f"{name}: Zero takes no inputs")
        if len(op.shape) != 3 or min(op.shape) < 1:
            raise ShapeError(f"{name}: bad Zero shape {op.shape}")
        return tuple(op.shape)
    if isinstance(op, Sum):
        if not in_shapes:
            raise ShapeError(f"{name}: Sum needs at least one input")
        if any(s != in_shapes[0] for s in in_shapes):
            raise ShapeError(f"{name}: Sum inputs disagree: {in_shapes}")
        return in_shapes[0]
    s = single()
    if isinstance(op, (Conv, AvgPool)):
        if len(s) != 3:
            raise ShapeError(f"{name}: expects (C, H, W) input, got {s}")
        c, h, w = s
        if isinstance(op, Conv) and c != op.c_in:
            raise ShapeError(f"{name}: expects {op.c_in} channels, got {c}")
        if isinstance(op, AvgPool) and op.pad >= op.k:
            raise ShapeError(f"{name}: padding too large for pooling window")
        ho, wo = _out_size(h, op.k, op.stride, op.pad), _out_size(w, op.k, op.stride, op.pad)
        if ho < 1 or wo < 1:
            raise ShapeError(f"{name}: spatial size {h}x{w} underflows to {ho}x{wo}")
        return (op.c_out if isinstance(op, Conv) else c, ho, wo)
    if isinstance(op, BatchNorm):
        if len(s) < 1 or s[0] != op.c:
            raise ShapeError(f"{name}: expects {op.c} channels, got {s}")
        return s
    if isinstance(op, ReLU):
        return s
    if isinstance(op, GlobalAvgPool):
        if len(s) != 3:
            raise ShapeError(f"{name}: expects (C, H, W) input, got {s}")
        return (s[0],)
    if isinstance(op, Linear):
        if s != (op.in_features,):
            raise ShapeError(f"{name}: expects ({op.in_features},) input, got {s}")
        return (op.out_features,)
    raise ShapeError(f"{name}: unknown layer type {type(op).__name__}")

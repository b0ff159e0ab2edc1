"""Minimal float64 CNN engine: shape inference, forward pass, per-sample gradients."""
from .engine import activation_patterns, forward, init_params, ntk_gram, param_gradient
from .kernels import BACKEND
from .layers import (
    AvgPool,
    BatchNorm,
    Conv,
    GlobalAvgPool,
    Layer,
    Linear,
    NetworkSpec,
    ReLU,
    ShapeError,
    Sum,
    Zero,
)

__all__ = [
    "AvgPool",
    "BACKEND",
    "BatchNorm",
    "Conv",
    "GlobalAvgPool",
    "Layer",
    "Linear",
    "NetworkSpec",
    "ReLU",
    "ShapeError",
    "Sum",
    "Zero",
    "activation_patterns",
    "forward",
    "init_params",
    "ntk_gram",
    "param_gradient",
]

"""Zero-shot indicators: NTK condition number, linear-region count, FLOPs, latency.

All four map a candidate architecture to one scalar without training.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .hw_model import LatencyTable, latency_key
from .nn import engine
from .nn.kernels import jacobi_eigvalsh
from .nn.layers import (
    AvgPool,
    BatchNorm,
    Conv,
    GlobalAvgPool,
    Linear,
    NetworkSpec,
    ShapeError,
    Sum,
    Zero,
)
from .search_space import CellGenotype, MacroSkeleton, OperatorKind, SupernetMask, instantiate_network
from .seeding import derive_seed

RANK_EPS = 1e-12
PSD_TOL = 1e-6
INF = math.inf


@dataclass(frozen=True)
class NtkSpectrum:
    """Descending NTK eigenvalues, clamped at 0; ``raw_min`` keeps the unclamped minimum."""

    eigenvalues: tuple[float, ...]
    batch_size: int
    raw_min: float

    @property
    def top(self) -> float:
        return self.eigenvalues[0]

    def is_psd(self, tol: float = PSD_TOL) -> bool:
        return self.raw_min >= -tol * self.top


def spectrum_from_gram(gram: np.ndarray) -> NtkSpectrum:
    gram = np.asarray(gram, dtype=np.float64)
    ev, _ = jacobi_eigvalsh(gram)
    ev = np.sort(ev)[::-1]
    raw_min = float(ev[-1])
    return NtkSpectrum(tuple(float(v) for v in np.maximum(ev, 0.0)), gram.shape[0], raw_min)


def spectrum_from_jacobian(jac: np.ndarray) -> NtkSpectrum:
    jac = np.asarray(jac, dtype=np.float64)
    return spectrum_from_gram(jac @ jac.T)


def condition_number(spectrum: NtkSpectrum, i: int = 2) -> float:
    """K_i = lambda_1 / lambda_{n-i}; infinite when the divisor is numerically zero."""
    n = spectrum.batch_size
    if not 0 <= i <= n - 1:
        raise ValueError(f"ntk index {i} needs a batch of at least {i + 1}, got {n}")
    top = spectrum.eigenvalues[0]
    low = spectrum.eigenvalues[n - i - 1]
    if top <= 0.0 or low <= RANK_EPS * top:
        return INF
    return top / low


def ntk_spectrum(spec: NetworkSpec, params_seed: int, batch) -> NtkSpectrum:
    params = engine.init_params(spec, params_seed)
    return spectrum_from_gram(engine.ntk_gram(spec, params, batch))


def ntk_condition_number(spec: NetworkSpec, params_seeds: Sequence[int], batch, i: int = 2) -> float:
    """Mean of K_i over parameter initialisations; infinite if any draw is rank deficient."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != len(spec.input_shape) + 1 or batch.shape[1:] != spec.input_shape:
        raise ShapeError(f"batch shape {batch.shape} does not match network input {spec.input_shape}")
    if batch.shape[0] < i + 1:
        raise ValueError(f"ntk index {i} needs a batch of at least {i + 1}, got {batch.shape[0]}")
    if not params_seeds:
        raise ValueError("need at least one parameter seed")
    values = [condition_number(ntk_spectrum(spec, s, batch), i) for s in params_seeds]
    if any(math.isinf(v) for v in values):
        return INF
    return float(np.mean(values))


def count_patterns(spec: NetworkSpec, params: np.ndarray, inputs) -> int:
    """Number of distinct ReLU activation patterns produced by ``inputs``."""
    pattern = engine.activation_patterns(spec, params, inputs)
    if pattern.ndim == 1:
        return 1
    if pattern.shape[1] == 0:
        return 1
    packed = np.packbits(pattern, axis=1)
    return int(np.unique(packed, axis=0).shape[0])


def gaussian_inputs(shape: tuple[int, ...], n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n,) + tuple(shape))


def linear_region_count(
    spec: NetworkSpec, params_seeds: Sequence[int], lr_samples: int, input_rng_seed: int
) -> float:
    """Mean over initialisations of the distinct-pattern count of ``lr_samples`` Gaussian inputs."""
    if lr_samples < 1:
        raise ValueError("lr_samples must be >= 1")
    if not params_seeds:
        raise ValueError("need at least one parameter seed")
    x = gaussian_inputs(spec.input_shape, lr_samples, input_rng_seed)
    counts = [count_patterns(spec, engine.init_params(spec, s), x) for s in params_seeds]
    return float(np.mean(counts))


def _numel(shape) -> int:
    return int(np.prod(shape, dtype=np.int64))


def layer_flops(spec: NetworkSpec) -> list[int]:
    """Per-layer FLOPs for one sample; a multiply-add counts as 2."""
    out = []
    for i, (layer, shape) in enumerate(zip(spec.layers, spec.shapes)):
        op = layer.op
        if isinstance(op, Conv):
            _, ho, wo = shape
            f = 2 * op.k * op.k * op.c_in * op.c_out * ho * wo
        elif isinstance(op, Linear):
            f = 2 * op.in_features * op.out_features
        elif isinstance(op, BatchNorm):
            f = 2 * _numel(shape)
        elif isinstance(op, AvgPool):
            f = op.k * op.k * _numel(shape)
        elif isinstance(op, GlobalAvgPool):
            f = _numel(spec.input_shape_of(i))
        elif isinstance(op, Sum):
            f = (len(layer.inputs) - 1) * _numel(shape) if op.counted else 0
        else:  # ReLU, Zero
            f = 0
        out.append(int(f))
    return out


def flops_estimate(spec: NetworkSpec) -> int:
    return sum(layer_flops(spec))


def _as_mask(cell: CellGenotype | SupernetMask) -> SupernetMask:
    return cell.to_mask() if isinstance(cell, CellGenotype) else cell


def latency_sum_us(cell: CellGenotype | SupernetMask, table: LatencyTable, skeleton: MacroSkeleton) -> float:
    mask = _as_mask(cell)
    terms = []
    for stage, shape in enumerate(skeleton.stages()):
        for _ in range(skeleton.cells_per_stack):
            for e in range(mask.topology.num_edges):
                for op in mask.alive_ops(e):
                    if op is not OperatorKind.ZERO:
                        terms.append(table.lookup(latency_key(op, stage, shape)))
    return math.fsum(terms)


def latency_estimate(cell: CellGenotype | SupernetMask, table: LatencyTable, skeleton: MacroSkeleton) -> float:
    """Table-lookup latency in milliseconds, constant overhead included.

    Raises :class:`hwnas.hw_model.MissingEntry` when the profile lacks a needed key.
    """
    return (latency_sum_us(cell, table, skeleton) + table.const_overhead_us) / 1000.0


@dataclass(frozen=True)
class ProxyVector:
    K: float
    R: float
    F: int
    L: Optional[float]

    def to_dict(self) -> dict:
        return {
            "K": "inf" if math.isinf(self.K) else (None if math.isnan(self.K) else self.K),
            "R": None if math.isnan(self.R) else self.R,
            "F": self.F,
            "L_ms": self.L,
        }


@dataclass(frozen=True)
class ProxyConfig:
    """Knobs shared by every proxy evaluation.

    ``lr_skeleton`` optionally swaps in a different (usually thinner) skeleton
    for region counting; ``None`` uses the evaluation skeleton.
    ``inputs`` optionally supplies a data pool (N, C, H, W) for NTK batches
    instead of Gaussian noise.
    """

    batch_size: int = 32
    ntk_index: int = 2
    lr_samples: int = 128
    lr_skeleton: Optional[MacroSkeleton] = None
    inputs: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.ntk_index <= self.batch_size - 1:
            raise ValueError(f"ntk_index must lie in [0, batch_size - 1], got {self.ntk_index}")
        if self.lr_samples < 1:
            raise ValueError("lr_samples must be >= 1")

    def __hash__(self):
        return hash((self.batch_size, self.ntk_index, self.lr_samples, self.lr_skeleton))

    def __eq__(self, other):
        if not isinstance(other, ProxyConfig):
            return NotImplemented
        same_inputs = (self.inputs is None and other.inputs is None) or (
            self.inputs is not None and other.inputs is not None and np.array_equal(self.inputs, other.inputs)
        )
        return (
            self.batch_size == other.batch_size
            and self.ntk_index == other.ntk_index
            and self.lr_samples == other.lr_samples
            and self.lr_skeleton == other.lr_skeleton
            and same_inputs
        )


def ntk_batch(config: ProxyConfig, input_shape: tuple[int, ...], seed: int, size: Optional[int] = None) -> np.ndarray:
    n = config.batch_size if size is None else size
    rng = np.random.default_rng(seed)
    if config.inputs is None:
        return rng.standard_normal((n,) + tuple(input_shape))
    pool = np.asarray(config.inputs, dtype=np.float64)
    if pool.shape[1:] != tuple(input_shape):
        raise ShapeError(f"input pool shape {pool.shape[1:]} does not match {input_shape}")
    if pool.shape[0] < n:
        raise ValueError(f"input pool has {pool.shape[0]} samples, batch needs {n}")
    # unsorted draw: a prefix of a larger batch is itself a uniform subset
    return pool[rng.choice(pool.shape[0], size=n, replace=False)]


@dataclass(frozen=True)
class ProxyEvaluator:
    """Computes a :class:`ProxyVector` for a cell under one seed.

    The seed fixes parameter initialisation, the NTK batch and the region
    sampling inputs, so paired calls on two masks share all randomness.
    Indicators switched off via ``need_ntk`` / ``need_lr`` come back as NaN.
    """

    skeleton: MacroSkeleton
    config: ProxyConfig = ProxyConfig()
    table: Optional[LatencyTable] = None
    need_ntk: bool = True
    need_lr: bool = True

    def __call__(self, cell: CellGenotype | SupernetMask, seed: int) -> ProxyVector:
        spec = instantiate_network(self.skeleton, cell)
        params_seed = derive_seed(seed, 0)
        k = math.nan
        r = math.nan
        if self.need_ntk:
            batch = ntk_batch(self.config, self.skeleton.input_shape, derive_seed(seed, 1))
            k = ntk_condition_number(spec, [params_seed], batch, self.config.ntk_index)
        if self.need_lr:
            lr_spec = spec if self.config.lr_skeleton is None else instantiate_network(self.config.lr_skeleton, cell)
            r = linear_region_count(lr_spec, [params_seed], self.config.lr_samples, derive_seed(seed, 2))
        f = flops_estimate(spec)
        lat = latency_estimate(cell, self.table, self.skeleton) if self.table is not None else None
        return ProxyVector(k, r, f, lat)

    def with_table(self, table: Optional[LatencyTable]) -> "ProxyEvaluator":
        return replace(self, table=table)


def score_cell(
    cell: CellGenotype | SupernetMask,
    evaluator: ProxyEvaluator,
    seeds: Sequence[int],
) -> ProxyVector:
    """Average the stochastic indicators over ``seeds``; F and L are exact."""
    vecs = [evaluator(cell, s) for s in seeds]
    ks = [v.K for v in vecs]
    k = INF if any(math.isinf(x) for x in ks) else float(np.mean(ks))
    r = float(np.mean([v.R for v in vecs]))
    return ProxyVector(k, r, vecs[0].F, vecs[0].L)

"""Cell genotypes, supernet masks, the macro skeleton and the genotype text codec.

A cell is a DAG whose nodes are feature maps and whose edges carry one
operator each (single path) or a set of alive operators (supernet).  The
text codec follows the NAS-Bench-201 grammar::

    |nor_conv_3x3~0|+|none~0|skip_connect~1|+|avg_pool_3x3~0|...|

where the k-th ``+``-separated group lists the incoming edges of node k as
``op~src`` tokens.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .nn.layers import (
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


class GenotypeError(ValueError):
    """Raised for malformed genotype strings or inconsistent cells."""


class OperatorKind(enum.IntEnum):
    # enum order is the tie-break order used by the search
    ZERO = 0
    SKIP_CONNECT = 1
    CONV_1X1 = 2
    CONV_3X3 = 3
    AVG_POOL_3X3 = 4

    @property
    def op_name(self) -> str:
        return _OP_NAMES[self]

    @classmethod
    def from_name(cls, name: str) -> "OperatorKind":
        try:
            return _NAME_TO_OP[name]
        except KeyError:
            raise GenotypeError(f"unknown operator {name!r}") from None

    def __str__(self) -> str:
        return self.op_name


_OP_NAMES = {
    OperatorKind.ZERO: "none",
    OperatorKind.SKIP_CONNECT: "skip_connect",
    OperatorKind.CONV_1X1: "nor_conv_1x1",
    OperatorKind.CONV_3X3: "nor_conv_3x3",
    OperatorKind.AVG_POOL_3X3: "avg_pool_3x3",
}
_NAME_TO_OP = {v: k for k, v in _OP_NAMES.items()}

ALL_OPS: tuple[OperatorKind, ...] = tuple(OperatorKind)


@dataclass(frozen=True)
class CellTopology:
    """Node count plus the canonical edge list (grouped by dst, then src)."""

    num_nodes: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.num_nodes < 2:
            raise GenotypeError("a cell needs at least 2 nodes")
        edges = tuple((int(s), int(d)) for s, d in self.edges)
        for s, d in edges:
            if not 0 <= s < d < self.num_nodes:
                raise GenotypeError(f"invalid edge {s}->{d} for {self.num_nodes} nodes")
        if len(set(edges)) != len(edges):
            raise GenotypeError("duplicate edge in topology")
        canon = tuple(sorted(edges, key=lambda e: (e[1], e[0])))
        if edges != canon:
            raise GenotypeError("edges must be ordered by (dst, src)")
        dsts = {d for _, d in edges}
        missing = [n for n in range(1, self.num_nodes) if n not in dsts]
        if missing:
            raise GenotypeError(f"nodes without incoming edges: {missing}")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def fully_connected(cls, num_nodes: int = 4) -> "CellTopology":
        edges = tuple((s, d) for d in range(1, num_nodes) for s in range(d))
        return cls(num_nodes, edges)

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[int, int]]) -> "CellTopology":
        edges = sorted({(int(s), int(d)) for s, d in edges}, key=lambda e: (e[1], e[0]))
        if not edges:
            raise GenotypeError("empty edge list")
        return cls(max(d for _, d in edges) + 1, tuple(edges))

    @property
    def num_edges(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class CellGenotype:
    topology: CellTopology
    ops: tuple[OperatorKind, ...]

    def __post_init__(self):
        ops = tuple(OperatorKind(o) for o in self.ops)
        if len(ops) != self.topology.num_edges:
            raise GenotypeError(
                f"{len(ops)} operators given for {self.topology.num_edges} edges"
            )
        object.__setattr__(self, "ops", ops)

    def to_mask(self) -> "SupernetMask":
        alive = np.zeros((self.topology.num_edges, len(ALL_OPS)), dtype=bool)
        alive[np.arange(len(self.ops)), list(self.ops)] = True
        return SupernetMask(self.topology, alive)

    def __str__(self) -> str:
        return format_genotype(self)


class SupernetMask:
    """Alive-operator matrix of shape (E, 5); immutable once built."""

    __slots__ = ("topology", "alive")

    def __init__(self, topology: CellTopology, alive):
        alive = np.array(alive, dtype=bool)
        if alive.shape != (topology.num_edges, len(ALL_OPS)):
            raise GenotypeError(
                f"mask shape {alive.shape} != ({topology.num_edges}, {len(ALL_OPS)})"
            )
        if not alive.any(axis=1).all():
            raise GenotypeError("every edge needs at least one alive operator")
        alive.setflags(write=False)
        self.topology = topology
        self.alive = alive

    @classmethod
    def full(cls, topology: CellTopology, ops: Iterable[OperatorKind] = ALL_OPS) -> "SupernetMask":
        alive = np.zeros((topology.num_edges, len(ALL_OPS)), dtype=bool)
        alive[:, [int(o) for o in ops]] = True
        return cls(topology, alive)

    def alive_ops(self, edge: int) -> list[OperatorKind]:
        return [OperatorKind(j) for j in np.flatnonzero(self.alive[edge])]

    def num_alive(self, edge: int) -> int:
        return int(self.alive[edge].sum())

    @property
    def total_alive(self) -> int:
        return int(self.alive.sum())

    def is_single_path(self) -> bool:
        return bool((self.alive.sum(axis=1) == 1).all())

    def without(self, edge: int, op: OperatorKind) -> "SupernetMask":
        if not self.alive[edge, op]:
            raise GenotypeError(f"{OperatorKind(op).op_name} is not alive on edge {edge}")
        alive = self.alive.copy()
        alive[edge, op] = False
        return SupernetMask(self.topology, alive)

    def to_genotype(self) -> CellGenotype:
        if not self.is_single_path():
            raise GenotypeError("mask is not single-path")
        return CellGenotype(self.topology, tuple(OperatorKind(j) for j in self.alive.argmax(axis=1)))

    def __eq__(self, other):
        if not isinstance(other, SupernetMask):
            return NotImplemented
        return self.topology == other.topology and np.array_equal(self.alive, other.alive)

    def __hash__(self):
        return hash((self.topology, self.alive.tobytes()))

    def __repr__(self):
        rows = ["".join("1" if a else "." for a in row) for row in self.alive]
        return f"SupernetMask({'/'.join(rows)})"


def parse_genotype(text: str) -> CellGenotype:
    """Parse a NAS-Bench-201 style cell string.

    Tokens inside a node group may appear in any src order; the result is
    canonical (src ascending), so ``format_genotype`` normalises the text.
    """
    text = text.strip()
    if not text:
        raise GenotypeError("empty genotype string")
    groups = text.split("+")
    edges: list[tuple[int, int]] = []
    ops: dict[tuple[int, int], OperatorKind] = {}
    for dst, group in enumerate(groups, start=1):
        if len(group) < 2 or not (group.startswith("|") and group.endswith("|")):
            raise GenotypeError(f"malformed node group {group!r}")
        tokens = group[1:-1].split("|")
        for tok in tokens:
            name, sep, src_text = tok.partition("~")
            if not sep or not src_text.isdigit():
                raise GenotypeError(f"malformed token {tok!r}")
            op = OperatorKind.from_name(name)
            src = int(src_text)
            if src >= dst:
                raise GenotypeError(f"source {src} must precede node {dst}")
            if (src, dst) in ops:
                raise GenotypeError(f"edge {src}->{dst} listed twice")
            ops[(src, dst)] = op
            edges.append((src, dst))
    topo = CellTopology.from_edges(edges)
    if topo.num_nodes != len(groups) + 1:
        raise GenotypeError("node grouping does not match edge destinations")
    return CellGenotype(topo, tuple(ops[e] for e in topo.edges))


def format_genotype(g: CellGenotype) -> str:
    groups = []
    for dst in range(1, g.topology.num_nodes):
        toks = [
            f"{op.op_name}~{s}"
            for (s, d), op in zip(g.topology.edges, g.ops)
            if d == dst
        ]
        groups.append("|" + "|".join(toks) + "|")
    return "+".join(groups)


def enumerate_space(
    topology: CellTopology, ops: Iterable[OperatorKind] = ALL_OPS
) -> Iterator[CellGenotype]:
    """Yield every genotype, lexicographic in op enum order by edge index."""
    ops = sorted({OperatorKind(o) for o in ops})
    if not ops:
        raise ValueError("need at least one operator")
    for combo in itertools.product(ops, repeat=topology.num_edges):
        yield CellGenotype(topology, combo)


def space_size(topology: CellTopology, ops: Sequence[OperatorKind]) -> int:
    return len(set(ops)) ** topology.num_edges


def random_genotype(topology: CellTopology, ops: Sequence[OperatorKind], rng) -> CellGenotype:
    ops = sorted({OperatorKind(o) for o in ops})
    idx = rng.integers(0, len(ops), size=topology.num_edges)
    return CellGenotype(topology, tuple(ops[i] for i in idx))


@dataclass(frozen=True)
class MacroSkeleton:
    """Stem conv, ``num_stacks`` stacks of cells, residual reductions, classifier.

    Each reduction is a NAS-Bench-201 residual block: ReLU-Conv3x3(s2)-BN,
    ReLU-Conv3x3-BN, and an AvgPool(2)+Conv1x1 shortcut, summed.  Channels
    double and spatial size halves at every reduction.
    """

    stem_channels: int = 16
    num_stacks: int = 3
    cells_per_stack: int = 1
    num_classes: int = 10
    input_shape: tuple[int, int, int] = (3, 8, 8)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ValueError(f"input_shape must be (C, H, W) with positive dims, got {self.input_shape}")
        for name in ("stem_channels", "num_stacks", "cells_per_stack", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def stages(self) -> list[tuple[int, int, int]]:
        """(channels, height, width) seen by the cells of each stack."""
        c = self.stem_channels
        _, h, w = self.input_shape
        out = [(c, h, w)]
        for _ in range(self.num_stacks - 1):
            # stride-2 conv3x3 pad 1 and AvgPool(2, 2) must agree
            h2, w2 = (h - 1) // 2 + 1, (w - 1) // 2 + 1
            hp, wp = (h - 2) // 2 + 1, (w - 2) // 2 + 1
            if min(hp, wp) < 1:
                raise ShapeError(f"spatial size {h}x{w} too small for a reduction block")
            if (h2, w2) != (hp, wp):
                raise ShapeError(f"odd spatial size {h}x{w} breaks the residual shortcut")
            c, h, w = 2 * c, h2, w2
            out.append((c, h, w))
        return out

    @property
    def num_cells(self) -> int:
        return self.num_stacks * self.cells_per_stack


@dataclass
class _Builder:
    layers: list[Layer] = field(default_factory=list)

    def add(self, op, inputs, name) -> int:
        self.layers.append(Layer(op, tuple(inputs), name))
        return len(self.layers) - 1


_CONV_K = {OperatorKind.CONV_1X1: 1, OperatorKind.CONV_3X3: 3}


def _relu_conv_bn(b: _Builder, x: int, c_in: int, c_out: int, k: int, stride: int, name: str) -> int:
    x = b.add(ReLU(), [x], f"{name}.relu")
    x = b.add(Conv(c_in, c_out, k, stride, (k - 1) // 2), [x], f"{name}.conv")
    return b.add(BatchNorm(c_out), [x], f"{name}.bn")


def _add_cell(b: _Builder, x: int, mask: SupernetMask, stage: tuple[int, int, int], prefix: str) -> int:
    c, h, w = stage
    nodes = [x]
    topo = mask.topology
    for dst in range(1, topo.num_nodes):
        branches = []
        for e, (src, d) in enumerate(topo.edges):
            if d != dst:
                continue
            for op in mask.alive_ops(e):
                name = f"{prefix}.e{src}-{dst}.{op.op_name}"
                if op is OperatorKind.ZERO:
                    branches.append(b.add(Zero((c, h, w)), [], name))
                elif op is OperatorKind.SKIP_CONNECT:
                    branches.append(nodes[src])
                elif op is OperatorKind.AVG_POOL_3X3:
                    branches.append(b.add(AvgPool(3, 1, 1), [nodes[src]], name))
                else:
                    branches.append(_relu_conv_bn(b, nodes[src], c, c, _CONV_K[op], 1, name))
        # node accumulation is not charged in FLOPs so operator costs stay additive
        nodes.append(b.add(Sum(counted=False), branches, f"{prefix}.node{dst}"))
    return nodes[-1]


def _add_reduction(b: _Builder, x: int, c_in: int, c_out: int, prefix: str) -> int:
    a = _relu_conv_bn(b, x, c_in, c_out, 3, 2, f"{prefix}.conv_a")
    a = _relu_conv_bn(b, a, c_out, c_out, 3, 1, f"{prefix}.conv_b")
    s = b.add(AvgPool(2, 2, 0), [x], f"{prefix}.shortcut.pool")
    s = b.add(Conv(c_in, c_out, 1, 1, 0), [s], f"{prefix}.shortcut.conv")
    return b.add(Sum(counted=True), [a, s], f"{prefix}.add")


def instantiate_network(skeleton: MacroSkeleton, cell: CellGenotype | SupernetMask) -> NetworkSpec:
    """Build the flat layer list for ``cell`` placed in every stack of ``skeleton``.

    Multi-alive supernet edges contribute the sum of their operators' outputs.
    """
    mask = cell.to_mask() if isinstance(cell, CellGenotype) else cell
    stages = skeleton.stages()
    b = _Builder()
    c0 = skeleton.input_shape[0]
    x = b.add(Conv(c0, skeleton.stem_channels, 3, 1, 1), [-1], "stem.conv")
    x = b.add(BatchNorm(skeleton.stem_channels), [x], "stem.bn")
    for s, stage in enumerate(stages):
        if s > 0:
            x = _add_reduction(b, x, stages[s - 1][0], stage[0], f"reduce{s}")
        for j in range(skeleton.cells_per_stack):
            x = _add_cell(b, x, mask, stage, f"stack{s}.cell{j}")
    c_last = stages[-1][0]
    x = b.add(BatchNorm(c_last), [x], "head.bn")
    x = b.add(ReLU(), [x], "head.relu")
    x = b.add(GlobalAvgPool(), [x], "head.gap")
    b.add(Linear(c_last, skeleton.num_classes), [x], "head.fc")
    return NetworkSpec(skeleton.input_shape, tuple(b.layers))

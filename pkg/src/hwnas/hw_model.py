"""Device latency profiles: ingestion, validation, persistence.

CSV layout (UTF-8, LF, '.' decimal separator)::

    op,stage,c_in,c_out,h,w,latency_us
    nor_conv_3x3,0,16,16,8,8,2473.5
    ...
    __const_overhead__,0,0,0,0,0,812.0

``stage`` is the stack index the cell sits in.  The stem, the reduction
blocks and the classifier do not depend on the genotype and are folded
into the constant-overhead row.
"""
from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from .search_space import ALL_OPS, CellTopology, MacroSkeleton, OperatorKind

HEADER = ["op", "stage", "c_in", "c_out", "h", "w", "latency_us"]
CONST_OVERHEAD_OP = "__const_overhead__"

TableKey = tuple[str, int, int, int, int, int]


class TableError(ValueError):
    """Malformed or invalid latency table."""


class MissingEntry(KeyError):
    """The device profile has no entry for a key the network needs."""

    def __init__(self, key: TableKey):
        super().__init__(key)
        self.key = key

    def __str__(self):
        return f"latency table has no entry for {format_key(self.key)}"


def format_key(key: TableKey) -> str:
    return ",".join(str(v) for v in key)


def latency_key(op: OperatorKind, stage: int, stage_shape: tuple[int, int, int]) -> TableKey:
    c, h, w = stage_shape
    return (OperatorKind(op).op_name, int(stage), int(c), int(c), int(h), int(w))


@dataclass(frozen=True)
class LatencyTable:
    device_name: str
    const_overhead_us: float
    entries: Mapping[TableKey, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (math.isfinite(self.const_overhead_us) and self.const_overhead_us >= 0):
            raise TableError(f"const overhead must be finite and >= 0, got {self.const_overhead_us}")
        clean = {}
        for key, value in self.entries.items():
            key = _check_key(key)
            value = float(value)
            if not (math.isfinite(value) and value >= 0):
                raise TableError(f"latency for {format_key(key)} must be finite and >= 0, got {value}")
            clean[key] = value
        object.__setattr__(self, "const_overhead_us", float(self.const_overhead_us))
        object.__setattr__(self, "entries", MappingProxyType(clean))

    def lookup(self, key: TableKey) -> float:
        try:
            return self.entries[key]
        except KeyError:
            raise MissingEntry(key) from None

    def without(self, key: TableKey) -> "LatencyTable":
        entries = dict(self.entries)
        del entries[key]
        return LatencyTable(self.device_name, self.const_overhead_us, entries)

    def __eq__(self, other):
        if not isinstance(other, LatencyTable):
            return NotImplemented
        return (
            self.device_name == other.device_name
            and self.const_overhead_us == other.const_overhead_us
            and dict(self.entries) == dict(other.entries)
        )

    def __hash__(self):
        return hash((self.device_name, self.const_overhead_us, tuple(sorted(self.entries.items()))))


def _check_key(key) -> TableKey:
    if len(key) != 6:
        raise TableError(f"table key needs 6 fields, got {key!r}")
    op, *dims = key
    if not isinstance(op, str) or not op:
        raise TableError(f"bad operator name in key {key!r}")
    if op == CONST_OVERHEAD_OP:
        raise TableError("constant overhead is not a regular entry")
    dims = [int(d) for d in dims]
    if dims[0] < 0 or min(dims[1:]) < 1:
        raise TableError(f"bad dimensions in key {key!r}")
    return (op, *dims)


def parse_table(text: str, device_name: str = "device") -> LatencyTable:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != HEADER:
        raise TableError(f"header must be {','.join(HEADER)}")
    overhead = None
    entries: dict[TableKey, float] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(HEADER):
            raise TableError(f"line {lineno}: expected {len(HEADER)} fields, got {len(row)}")
        op = row[0].strip()
        try:
            dims = tuple(int(v) for v in row[1:6])
            value = float(row[6])
        except ValueError:
            raise TableError(f"line {lineno}: malformed row {','.join(row)}") from None
        if not math.isfinite(value) or value < 0:
            raise TableError(f"line {lineno}: latency must be finite and >= 0, got {row[6]}")
        if op == CONST_OVERHEAD_OP:
            if dims != (0, 0, 0, 0, 0):
                raise TableError(f"line {lineno}: constant overhead row must have zero dimensions")
            if overhead is not None:
                raise TableError(f"line {lineno}: duplicate constant overhead row")
            overhead = value
            continue
        try:
            key = _check_key((op, *dims))
        except TableError as exc:
            raise TableError(f"line {lineno}: {exc}") from None
        if key in entries:
            raise TableError(f"line {lineno}: duplicate key {format_key(key)}")
        entries[key] = value
    if overhead is None:
        raise TableError(f"missing {CONST_OVERHEAD_OP} row")
    return LatencyTable(device_name, overhead, entries)


def load_table(path) -> LatencyTable:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    return parse_table(text, device_name=path.stem)


def dump_table(table: LatencyTable) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(HEADER)
    for key in sorted(table.entries):
        writer.writerow([*key, repr(table.entries[key])])
    writer.writerow([CONST_OVERHEAD_OP, 0, 0, 0, 0, 0, repr(table.const_overhead_us)])
    return out.getvalue()


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_table(table: LatencyTable, path) -> None:
    atomic_write_text(path, dump_table(table))


def required_keys(
    skeleton: MacroSkeleton, ops: Iterable[OperatorKind] = ALL_OPS
) -> list[TableKey]:
    """Every key a network built from ``ops`` may look up (Zero never needs one)."""
    keys = []
    for stage, shape in enumerate(skeleton.stages()):
        for op in sorted({OperatorKind(o) for o in ops}):
            if op is not OperatorKind.ZERO:
                keys.append(latency_key(op, stage, shape))
    return keys


def validate_coverage(
    table: LatencyTable,
    skeleton: MacroSkeleton,
    topology: CellTopology,
    ops: Iterable[OperatorKind] = ALL_OPS,
) -> list[TableKey]:
    """Keys missing from ``table``; empty iff no genotype of the space can miss a lookup.

    Every edge of a cell sees the same stage shape, so the topology only
    matters through having at least one edge.
    """
    if topology.num_edges == 0:
        return []
    return [k for k in required_keys(skeleton, ops) if k not in table.entries]


# MACs per microsecond and fixed call cost per operator for the synthetic profile
_SYNTH_THROUGHPUT = {
    OperatorKind.CONV_3X3: 60.0,
    OperatorKind.CONV_1X1: 35.0,
    OperatorKind.AVG_POOL_3X3: 20.0,
    OperatorKind.SKIP_CONNECT: 120.0,
}
_SYNTH_OFFSET_US = {
    OperatorKind.CONV_3X3: 15.0,
    OperatorKind.CONV_1X1: 10.0,
    OperatorKind.AVG_POOL_3X3: 8.0,
    OperatorKind.SKIP_CONNECT: 2.0,
}


def _op_macs(op: OperatorKind, shape: tuple[int, int, int]) -> int:
    c, h, w = shape
    if op is OperatorKind.CONV_3X3:
        return 9 * c * c * h * w
    if op is OperatorKind.CONV_1X1:
        return c * c * h * w
    if op is OperatorKind.AVG_POOL_3X3:
        return 9 * c * h * w
    return c * h * w


def synthetic_table(
    skeleton: MacroSkeleton,
    ops: Iterable[OperatorKind] = ALL_OPS,
    seed: int = 0,
    jitter: float = 0.15,
    device_name: str = "synthetic",
) -> LatencyTable:
    """SYNTHETIC device profile for tests and demos; not a measurement of real hardware.

    Latency is roughly proportional to operator MACs with per-operator
    efficiency and call overhead, perturbed by a seeded multiplicative jitter.
    """
    rng = np.random.default_rng(seed)
    entries = {}
    for key in required_keys(skeleton, ops):
        op = OperatorKind.from_name(key[0])
        stage_shape = (key[2], key[4], key[5])
        base = _SYNTH_OFFSET_US[op] + _op_macs(op, stage_shape) / _SYNTH_THROUGHPUT[op]
        entries[key] = round(base * (1.0 + jitter * rng.uniform(-1.0, 1.0)), 3)
    # stem, reductions and head: two 3x3 convs per reduction plus the stem
    overhead = 300.0
    c0, h, w = skeleton.input_shape[0], *skeleton.input_shape[1:]
    overhead += 9 * c0 * skeleton.stem_channels * h * w / 60.0
    stages = skeleton.stages()
    for (c_prev, _, _), (c, h, w) in zip(stages, stages[1:]):
        overhead += (9 * c_prev * c + 9 * c * c + c_prev * c) * h * w / 60.0
    return LatencyTable(device_name, round(overhead, 3), entries)

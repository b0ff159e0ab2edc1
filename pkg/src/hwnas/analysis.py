"""Rank correlation between proxies and accuracies, and the FLOPs/latency spectrum."""
from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .hw_model import LatencyTable, atomic_write_text
from .proxies import (
    ProxyConfig,
    condition_number,
    flops_estimate,
    latency_estimate,
    linear_region_count,
    ntk_batch,
    ntk_spectrum,
)
from .search_space import CellGenotype, MacroSkeleton, instantiate_network, parse_genotype
from .seeding import derive_seed

ORIENTATION = {
    "K": "lower_is_better",
    "R": "higher_is_better",
    "F": "lower_is_better",
    "L": "lower_is_better",
}
REPORT_HEADER = ["sweep_point", "dataset", "proxy", "tau", "orientation", "n"]


def _sign_matrix(v: np.ndarray, rows: slice) -> np.ndarray:
    block = v[rows, None]
    # comparisons rather than differences so that equal infinities tie
    return (block > v[None, :]).astype(np.int8) - (block < v[None, :]).astype(np.int8)


def kendall_tau(a: Sequence[float], b: Sequence[float], chunk: int = 1024) -> float:
    """Tau-a: (concordant - discordant) / (n(n-1)/2); tied pairs count as neither."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"kendall_tau needs two 1-D sequences of equal length, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("kendall_tau needs at least 2 observations")
    if np.isnan(a).any() or np.isnan(b).any():
        raise ValueError("kendall_tau input contains NaN")
    s = 0
    for start in range(0, n, chunk):
        rows = slice(start, min(start + chunk, n))
        prod = _sign_matrix(a, rows).astype(np.int64) * _sign_matrix(b, rows)
        s += int(prod.sum())
    # every unordered pair was counted twice
    return (s // 2) / (n * (n - 1) / 2)


@dataclass(frozen=True)
class BenchmarkRecord:
    genotype: str
    accuracy: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        parse_genotype(self.genotype)
        for name, acc in self.accuracy.items():
            if not name:
                raise ValueError("dataset names must be non-empty")
            if not (0.0 <= float(acc) <= 100.0):
                raise ValueError(f"accuracy {acc} for {self.genotype} on {name} is outside [0, 100]")

    @property
    def cell(self) -> CellGenotype:
        return parse_genotype(self.genotype)


def parse_accuracy_csv(text: str) -> list[BenchmarkRecord]:
    """Rows ``genotype,dataset,accuracy``; records keep first-appearance order."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["genotype", "dataset", "accuracy"]:
        raise ValueError("accuracy CSV header must be genotype,dataset,accuracy")
    table: dict[str, dict[str, float]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ValueError(f"line {lineno}: expected 3 fields, got {len(row)}")
        geno, dataset, acc = row
        try:
            value = float(acc)
        except ValueError:
            raise ValueError(f"line {lineno}: accuracy {acc!r} is not a number") from None
        slot = table.setdefault(geno, {})
        if dataset in slot:
            raise ValueError(f"line {lineno}: duplicate entry for {geno} on {dataset}")
        slot[dataset] = value
    return [BenchmarkRecord(g, accs) for g, accs in table.items()]


def load_accuracy_csv(path) -> list[BenchmarkRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_accuracy_csv(fh.read())


def dump_accuracy_csv(records: Iterable[BenchmarkRecord]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["genotype", "dataset", "accuracy"])
    for r in records:
        for name, acc in r.accuracy.items():
            w.writerow([r.genotype, name, repr(float(acc))])
    return out.getvalue()


@dataclass(frozen=True)
class SweepPoint:
    ntk_index: int
    batch_size: int

    def label(self, axis: str) -> str:
        return f"{axis}={getattr(self, axis)}"


def sweep_points(proxy_config: ProxyConfig, sweep: Optional[Mapping[str, Sequence[int]]]) -> tuple[str, list[SweepPoint]]:
    """Expand a one-axis sweep spec into points; no sweep means the configured point only."""
    base = SweepPoint(proxy_config.ntk_index, proxy_config.batch_size)
    if not sweep:
        return "ntk_index", [base]
    if len(sweep) != 1:
        raise ValueError("sweep must vary exactly one of ntk_index, batch_size")
    (axis, values), = sweep.items()
    if axis not in ("ntk_index", "batch_size"):
        raise ValueError(f"unknown sweep axis {axis!r}")
    values = list(values)
    if not values:
        raise ValueError("sweep values must be non-empty")
    points = [SweepPoint(int(v), base.batch_size) if axis == "ntk_index" else SweepPoint(base.ntk_index, int(v)) for v in values]
    for p in points:
        if p.batch_size < 1 or not 0 <= p.ntk_index <= p.batch_size - 1:
            raise ValueError(f"invalid sweep point ntk_index={p.ntk_index}, batch_size={p.batch_size}")
    return axis, points


@dataclass(frozen=True)
class _Job:
    cell: CellGenotype
    skeleton: MacroSkeleton
    proxy_config: ProxyConfig
    points: tuple[SweepPoint, ...]
    seed: int
    repetitions: int
    proxies: tuple[str, ...]
    table: Optional[LatencyTable]


def _score_one(job: _Job) -> dict:
    """Proxy values for one genotype: K per (rep, point), R per rep, exact F and L.

    Repetition ``rep`` uses the same seeds as ``ProxyEvaluator`` called with
    ``derive_seed(seed, rep)``.
    """
    spec = instantiate_network(job.skeleton, job.cell)
    out: dict = {}
    if "K" in job.proxies:
        max_bs = max(p.batch_size for p in job.points)
        k = np.empty((job.repetitions, len(job.points)))
        for rep in range(job.repetitions):
            base = derive_seed(job.seed, rep)
            # nested batches: a smaller sweep point uses a prefix of the largest one
            batch = ntk_batch(job.proxy_config, job.skeleton.input_shape, derive_seed(base, 1), size=max_bs)
            spectra = {}
            for j, p in enumerate(job.points):
                if p.batch_size not in spectra:
                    spectra[p.batch_size] = ntk_spectrum(spec, derive_seed(base, 0), batch[: p.batch_size])
                k[rep, j] = condition_number(spectra[p.batch_size], p.ntk_index)
        out["K"] = k
    if "R" in job.proxies:
        cfg = job.proxy_config
        lr_spec = spec if cfg.lr_skeleton is None else instantiate_network(cfg.lr_skeleton, job.cell)
        out["R"] = np.array(
            [
                linear_region_count(lr_spec, [derive_seed(base, 0)], cfg.lr_samples, derive_seed(base, 2))
                for base in (derive_seed(job.seed, rep) for rep in range(job.repetitions))
            ]
        )
    if "F" in job.proxies:
        out["F"] = float(flops_estimate(spec))
    if "L" in job.proxies:
        out["L"] = latency_estimate(job.cell, job.table, job.skeleton)
    return out


def score_population(
    cells: Sequence[CellGenotype],
    skeleton: MacroSkeleton,
    proxy_config: ProxyConfig,
    points: Sequence[SweepPoint],
    seed: int = 0,
    repetitions: int = 3,
    proxies: Sequence[str] = ("K", "R"),
    table: Optional[LatencyTable] = None,
    workers: int = 1,
) -> list[dict]:
    if "L" in proxies and table is None:
        raise ValueError("the latency proxy needs a table")
    jobs = [
        _Job(c, skeleton, proxy_config, tuple(points), seed, repetitions, tuple(proxies), table) for c in cells
    ]
    if workers <= 1 or len(jobs) <= 1:
        return [_score_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_score_one, jobs))


@dataclass(frozen=True)
class CorrelationRow:
    sweep_point: str
    dataset: str
    proxy: str
    tau: float
    orientation: str
    n: int

    def as_list(self) -> list:
        return [self.sweep_point, self.dataset, self.proxy, repr(self.tau), self.orientation, self.n]


def correlate_proxy(
    records: Sequence[BenchmarkRecord],
    skeleton: MacroSkeleton,
    proxy_config: ProxyConfig = ProxyConfig(),
    sweep: Optional[Mapping[str, Sequence[int]]] = None,
    seed: int = 0,
    repetitions: int = 3,
    proxies: Sequence[str] = ("K", "R"),
    table: Optional[LatencyTable] = None,
    workers: int = 1,
) -> list[CorrelationRow]:
    """Signed raw Kendall tau of each proxy against each dataset's accuracy.

    Stochastic proxies (K, R) give one tau per repetition; the mean is
    reported.  K is expected to correlate negatively, which the
    ``orientation`` column records instead of flipping the sign.
    """
    if len(records) < 2:
        raise ValueError("correlate_proxy needs at least 2 records")
    unknown = set(proxies) - set(ORIENTATION)
    if unknown:
        raise ValueError(f"unknown proxies {sorted(unknown)}")
    axis, points = sweep_points(proxy_config, sweep)
    cells = [r.cell for r in records]
    scores = score_population(cells, skeleton, proxy_config, points, seed, repetitions, proxies, table, workers)
    datasets = sorted({name for r in records for name in r.accuracy})
    rows = []
    for j, point in enumerate(points):
        for name in datasets:
            have = [i for i, r in enumerate(records) if name in r.accuracy]
            if len(have) < 2:
                continue
            acc = [records[i].accuracy[name] for i in have]
            for proxy in proxies:
                if proxy == "K":
                    taus = [kendall_tau([scores[i]["K"][rep, j] for i in have], acc) for rep in range(repetitions)]
                elif proxy == "R":
                    taus = [kendall_tau([scores[i]["R"][rep] for i in have], acc) for rep in range(repetitions)]
                else:
                    taus = [kendall_tau([scores[i][proxy] for i in have], acc)]
                rows.append(CorrelationRow(point.label(axis), name, proxy, float(np.mean(taus)), ORIENTATION[proxy], len(have)))
    return rows


def dump_correlation_csv(rows: Iterable[CorrelationRow]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in rows:
        w.writerow(r.as_list())
    return out.getvalue()


def flops_latency_spectrum(
    genotypes: Sequence[CellGenotype], table: LatencyTable, skeleton: MacroSkeleton
) -> list[tuple[int, float]]:
    """One (FLOPs, latency ms) pair per genotype, in input order."""
    return [
        (flops_estimate(instantiate_network(skeleton, g)), latency_estimate(g, table, skeleton)) for g in genotypes
    ]


def dump_spectrum_csv(genotypes: Sequence[str], pairs: Sequence[tuple[int, float]]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["genotype", "flops", "latency_ms"])
    for g, (f, lat) in zip(genotypes, pairs):
        w.writerow([g, f, repr(lat)])
    return out.getvalue()


def write_csv(path, text: str) -> None:
    atomic_write_text(Path(path), text)

"""Hardware-aware pruning-by-score search over a cell supernet.

Each outer iteration measures, for every alive (edge, operator) pair, how
the four indicators change when that operator is removed from the current
supernet, ranks those changes jointly, combines the ranks into a score and
drops the lowest-scoring operator(s) on every edge.  The loop ends when each
edge keeps exactly one operator.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .hw_model import LatencyTable, validate_coverage, format_key
from .proxies import ProxyConfig, ProxyEvaluator, ProxyVector, score_cell
from .search_space import (
    ALL_OPS,
    CellGenotype,
    CellTopology,
    MacroSkeleton,
    OperatorKind,
    SupernetMask,
    format_genotype,
)
from .seeding import derive_seed

log = logging.getLogger(__name__)

OBJECTIVES = ("hybrid", "flops", "latency")
_FINAL_TAG = 1 << 30

Evaluator = Callable[[SupernetMask, int], ProxyVector]


class ConfigError(ValueError):
    """Invalid search configuration."""


@dataclass(frozen=True)
class SearchConfig:
    """Search hyper-parameters.

    ``objective`` selects the score: ``"hybrid"`` is the weighted rank sum
    driven by ``lambda_flops`` / ``mu_latency``; ``"flops"`` and
    ``"latency"`` score on that single hardware rank (the weight -> 1 limit).
    """

    lambda_flops: float = 0.0
    mu_latency: float = 0.0
    ntk_index: int = 2
    batch_size: int = 32
    repetitions: int = 3
    lr_samples: int = 128
    seed: int = 0
    prune_per_edge_per_iter: int = 1
    table: Optional[LatencyTable] = None
    objective: str = "hybrid"
    workers: int = 1
    lr_skeleton: Optional[MacroSkeleton] = None

    def __post_init__(self):
        for name in ("lambda_flops", "mu_latency"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ConfigError(f"{name} must lie in [0, 1), got {v}")
        if self.lambda_flops > 0 and self.mu_latency > 0:
            raise ConfigError(
                "lambda_flops and mu_latency are mutually exclusive: "
                "the hybrid score uses one hardware indicator at a time"
            )
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        needs_table = self.mu_latency > 0 or self.objective == "latency"
        if needs_table and self.table is None:
            raise ConfigError("latency weighting requires a latency table")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.prune_per_edge_per_iter < 1:
            raise ConfigError("prune_per_edge_per_iter must be >= 1")
        if self.batch_size < 1 or not 0 <= self.ntk_index <= self.batch_size - 1:
            raise ConfigError(f"ntk_index must lie in [0, batch_size - 1] (batch_size={self.batch_size})")
        if self.lr_samples < 1:
            raise ConfigError("lr_samples must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def weights(self) -> tuple[float, float, float, float]:
        """(w_K, w_R, w_F, w_L) applied to the four rank indices."""
        if self.objective == "flops":
            return (0.0, 0.0, 1.0, 0.0)
        if self.objective == "latency":
            return (0.0, 0.0, 0.0, 1.0)
        if self.lambda_flops > 0:
            h = (1.0 - self.lambda_flops) / 2.0
            return (h, h, self.lambda_flops, 0.0)
        if self.mu_latency > 0:
            h = (1.0 - self.mu_latency) / 2.0
            return (h, h, 0.0, self.mu_latency)
        return (0.5, 0.5, 0.0, 0.0)

    def proxy_config(self) -> ProxyConfig:
        return ProxyConfig(
            batch_size=self.batch_size,
            ntk_index=self.ntk_index,
            lr_samples=self.lr_samples,
            lr_skeleton=self.lr_skeleton,
        )


@dataclass(frozen=True)
class DeltaRecord:
    edge: int
    op: OperatorKind
    dK: float
    dR: float
    dF: float
    dL: float
    k_removed_infinite: bool = False

    @property
    def key(self) -> tuple[int, int]:
        return (self.edge, int(self.op))

    def to_dict(self) -> dict:
        return {
            "edge": self.edge,
            "op": self.op.op_name,
            "dK": _json_float(self.dK),
            "dR": _json_float(self.dR),
            "dF": _json_float(self.dF),
            "dL": _json_float(self.dL),
            "k_removed_infinite": self.k_removed_infinite,
        }


def _json_float(x: float):
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


@dataclass
class SearchState:
    """Mutable search bookkeeping; one mask per cell type (only one type is used)."""

    masks: list[SupernetMask]
    t: int = 0
    eval_counter: int = 0
    network_evals: int = 0
    history: list[dict] = field(default_factory=list)

    @classmethod
    def initial(cls, topology: CellTopology, ops: Sequence[OperatorKind] = ALL_OPS) -> "SearchState":
        return cls([SupernetMask.full(topology, ops)])

    @property
    def mask(self) -> SupernetMask:
        return self.masks[0]

    def is_single_path(self) -> bool:
        return all(m.is_single_path() for m in self.masks)


def _k_delta(k_with: float, k_without: float) -> tuple[float, bool]:
    if math.isinf(k_without):
        return (math.nan if math.isinf(k_with) else -math.inf), True
    return k_with - k_without, False


def _call(job):
    evaluator, mask, seed = job
    return evaluator(mask, seed)


def _run_jobs(evaluator: Evaluator, jobs: list[tuple[SupernetMask, int]], workers: int) -> list[ProxyVector]:
    if workers <= 1 or len(jobs) <= 1:
        return [evaluator(m, s) for m, s in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_call, [(evaluator, m, s) for m, s in jobs], chunksize=max(1, len(jobs) // (4 * workers))))


def iteration_seed(config: SearchConfig, t: int, edge: int, op: OperatorKind, rep: int) -> int:
    """Seed for one paired evaluation.

    It depends on (seed, t, rep) only: every candidate of an iteration is
    measured under the same initialisation and inputs (common random
    numbers), which lets the unpruned supernet be evaluated once per
    repetition.  ``edge`` and ``op`` are accepted to keep the keying explicit.
    """
    return derive_seed(config.seed, t, rep)


def evaluate_deltas(
    state: SearchState,
    config: SearchConfig,
    evaluator: Evaluator,
    cell_type: int = 0,
) -> list[DeltaRecord]:
    """Indicator change from removing each prunable alive operator, averaged over repetitions."""
    mask = state.masks[cell_type]
    candidates = [
        (e, op)
        for e in range(mask.topology.num_edges)
        if mask.num_alive(e) > 1
        for op in mask.alive_ops(e)
    ]
    if not candidates:
        return []
    jobs: list[tuple[SupernetMask, int]] = []
    for rep in range(config.repetitions):
        seed = iteration_seed(config, state.t, 0, OperatorKind.ZERO, rep)
        jobs.append((mask, seed))
        for e, op in candidates:
            jobs.append((mask.without(e, op), iteration_seed(config, state.t, e, op, rep)))
    results = _run_jobs(evaluator, jobs, config.workers)
    state.network_evals += len(results)
    state.eval_counter += len(candidates)

    width = len(candidates) + 1
    records = []
    for c, (e, op) in enumerate(candidates):
        dks, drs, dfs, dls = [], [], [], []
        k_inf = False
        for rep in range(config.repetitions):
            base = results[rep * width]
            pruned = results[rep * width + 1 + c]
            dk, inf_flag = _k_delta(base.K, pruned.K)
            k_inf |= inf_flag
            dks.append(dk)
            drs.append(base.R - pruned.R)
            dfs.append(base.F - pruned.F)
            dls.append(0.0 if base.L is None else base.L - pruned.L)
        dk = math.nan if k_inf and any(math.isnan(x) for x in dks) else float(np.mean(dks))
        records.append(
            DeltaRecord(e, op, dk, float(np.mean(drs)), float(np.mean(dfs)), float(np.mean(dls)), k_inf)
        )
    return records


def _order(values: dict, descending: bool, worst: Optional[set] = None) -> dict:
    """Rank index per key: 0 = most favourable to prune; ties by (edge, op) ascending."""
    worst = worst or set()

    def sort_key(item):
        key, v = item
        bad = key in worst or math.isnan(v)
        primary = 0.0 if bad else (-v if descending else v)
        return (bad, primary, key)

    ordered = sorted(values.items(), key=sort_key)
    return {key: idx for idx, (key, _) in enumerate(ordered)}


def rank_deltas(deltas: Sequence[DeltaRecord]) -> dict[tuple[int, int], dict[str, int]]:
    """Joint ranks over all prunable (edge, op) pairs of one cell type."""
    if not deltas:
        raise ValueError("no deltas to rank")
    k_worst = {d.key for d in deltas if d.k_removed_infinite}
    rk = _order({d.key: d.dK for d in deltas}, descending=True, worst=k_worst)
    rr = _order({d.key: d.dR for d in deltas}, descending=False)
    rf = _order({d.key: d.dF for d in deltas}, descending=True)
    rl = _order({d.key: d.dL for d in deltas}, descending=True)
    return {d.key: {"K": rk[d.key], "R": rr[d.key], "F": rf[d.key], "L": rl[d.key]} for d in deltas}


def combine_ranks(ranks: dict[str, float], config: SearchConfig) -> float:
    wk, wr, wf, wl = config.weights
    return wk * ranks["K"] + wr * ranks["R"] + wf * ranks["F"] + wl * ranks["L"]


def rank_and_score(deltas: Sequence[DeltaRecord], config: SearchConfig) -> dict[tuple[int, int], float]:
    ranks = rank_deltas(deltas)
    return {key: combine_ranks(r, config) for key, r in ranks.items()}


def prune_step(
    state: SearchState,
    scores: dict[tuple[int, int], float],
    config: SearchConfig,
    cell_type: int = 0,
    table: Optional[list[dict]] = None,
) -> SearchState:
    """Drop the lowest-scoring operator(s) on every edge that still has a choice."""
    mask = state.masks[cell_type]
    alive = mask.alive.copy()
    pruned = []
    for e in range(mask.topology.num_edges):
        n_alive = mask.num_alive(e)
        if n_alive <= 1:
            continue
        cands = sorted(mask.alive_ops(e), key=lambda op: (scores[(e, int(op))], int(op)))
        for op in cands[: min(config.prune_per_edge_per_iter, n_alive - 1)]:
            alive[e, op] = False
            pruned.append((e, op.op_name))
    if not pruned:
        return state
    masks = list(state.masks)
    masks[cell_type] = SupernetMask(mask.topology, alive)
    entry = {"iteration": state.t, "cell_type": cell_type, "pruned": [list(p) for p in pruned]}
    if table is not None:
        entry["scores"] = table
    return SearchState(
        masks=masks,
        t=state.t + 1,
        eval_counter=state.eval_counter,
        network_evals=state.network_evals,
        history=state.history + [entry],
    )


@dataclass
class SearchReport:
    genotype: str
    iterations: list[dict]
    eval_counter: int
    network_evals: int
    final: ProxyVector
    config: dict
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "genotype": self.genotype,
            "eval_counter": self.eval_counter,
            "network_evals": self.network_evals,
            "final": self.final.to_dict(),
            "config": self.config,
            "iterations": self.iterations,
            "metadata": {"wall_time_s": self.wall_time_s},
        }


def config_summary(config: SearchConfig) -> dict:
    return {
        "lambda_flops": config.lambda_flops,
        "mu_latency": config.mu_latency,
        "ntk_index": config.ntk_index,
        "batch_size": config.batch_size,
        "repetitions": config.repetitions,
        "lr_samples": config.lr_samples,
        "seed": config.seed,
        "prune_per_edge_per_iter": config.prune_per_edge_per_iter,
        "objective": config.objective,
        "table_device": None if config.table is None else config.table.device_name,
    }


def default_evaluator(skeleton: MacroSkeleton, config: SearchConfig) -> ProxyEvaluator:
    wk, wr, _, _ = config.weights
    return ProxyEvaluator(
        skeleton=skeleton,
        config=config.proxy_config(),
        table=config.table,
        need_ntk=wk > 0,
        need_lr=wr > 0,
    )


def run_prune_search(
    topology: CellTopology,
    ops: Sequence[OperatorKind],
    skeleton: MacroSkeleton,
    config: SearchConfig,
    evaluator: Optional[Evaluator] = None,
) -> tuple[CellGenotype, SearchReport]:
    """Prune the full supernet down to a single path; deterministic given ``config.seed``."""
    start = time.perf_counter()
    ops = sorted({OperatorKind(o) for o in ops})
    if config.table is not None:
        missing = validate_coverage(config.table, skeleton, topology, ops)
        if missing:
            from .hw_model import MissingEntry

            raise MissingEntry(missing[0])
    if evaluator is None:
        evaluator = default_evaluator(skeleton, config)
    state = SearchState.initial(topology, ops)
    while not state.is_single_path():
        for ct in range(len(state.masks)):
            deltas = evaluate_deltas(state, config, evaluator, ct)
            if not deltas:
                continue
            ranks = rank_deltas(deltas)
            scores = {k: combine_ranks(r, config) for k, r in ranks.items()}
            table = [
                {**d.to_dict(), "ranks": ranks[d.key], "score": scores[d.key]}
                for d in deltas
            ]
            log.info("iteration %d: %d candidates evaluated", state.t, len(deltas))
            state = prune_step(state, scores, config, ct, table)
    genotype = state.mask.to_genotype()
    final = _final_vector(genotype, evaluator, config)
    report = SearchReport(
        genotype=format_genotype(genotype),
        iterations=state.history,
        eval_counter=state.eval_counter,
        network_evals=state.network_evals,
        final=final,
        config=config_summary(config),
        wall_time_s=time.perf_counter() - start,
    )
    return genotype, report


def _final_vector(genotype: CellGenotype, evaluator: Evaluator, config: SearchConfig) -> ProxyVector:
    seeds = [derive_seed(config.seed, _FINAL_TAG, rep) for rep in range(config.repetitions)]
    if isinstance(evaluator, ProxyEvaluator):
        return score_cell(genotype, evaluator, seeds)
    return evaluator(genotype.to_mask(), seeds[0])

"""JSON run configuration: schema, defaults and validation.

Every default lives in :data:`DEFAULTS`, so ``{"subcommand": "search"}`` is a
complete config.  Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

from .search import ConfigError
from .search_space import ALL_OPS, CellTopology, MacroSkeleton, OperatorKind

SUBCOMMANDS = ("search", "score", "latency", "flops", "correlate", "spectrum", "enumerate", "make-table")

DEFAULTS: dict[str, Any] = {
    "subcommand": None,
    "log_level": "WARNING",
    "seed": 0,
    "workers": None,  # None -> available CPUs
    "space": {"num_nodes": 4, "ops": [op.op_name for op in ALL_OPS]},
    "skeleton": {
        "stem_channels": 16,
        "num_stacks": 3,
        "cells_per_stack": 1,
        "num_classes": 10,
        "input_shape": [3, 8, 8],
    },
    "proxy": {
        "batch_size": 32,
        "ntk_index": 2,
        "lr_samples": 128,
        "repetitions": 3,
        "lr_skeleton": None,
    },
    "search": {
        "lambda_flops": 0.0,
        "mu_latency": 0.0,
        "prune_per_edge_per_iter": 1,
        "objective": "hybrid",
    },
    "table": None,
    "genotype": None,
    "output": None,
    "accuracy_csv": None,
    "sweep": None,
    "proxies": ["K", "R"],
    "genotypes_file": None,
    "num_random": 100,
    "limit": None,
    "synthetic_table_seed": 0,
}

_SECTIONS = ("space", "skeleton", "proxy", "search")


def _merge(base: dict, override: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if key in _SECTIONS and isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key!r} must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def _int(value, name: str, minimum: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return value


def _float(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    return float(value)


def skeleton_from(d: dict, name: str = "skeleton") -> MacroSkeleton:
    try:
        shape = tuple(_int(v, f"{name}.input_shape[]", 1) for v in d["input_shape"])
    except TypeError:
        raise ConfigError(f"{name}.input_shape must be a list of 3 integers") from None
    if len(shape) != 3:
        raise ConfigError(f"{name}.input_shape must have 3 entries")
    fields = {
        key: _int(d[key], f"{name}.{key}", 1)
        for key in ("stem_channels", "num_stacks", "cells_per_stack", "num_classes")
    }
    try:
        sk = MacroSkeleton(input_shape=shape, **fields)
        sk.stages()
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    return sk


@dataclass(frozen=True)
class RunConfig:
    raw: dict

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def subcommand(self) -> str:
        return self.raw["subcommand"]

    @property
    def topology(self) -> CellTopology:
        return CellTopology.fully_connected(self.raw["space"]["num_nodes"])

    @property
    def ops(self) -> list[OperatorKind]:
        return sorted({OperatorKind.from_name(n) for n in self.raw["space"]["ops"]})

    @property
    def skeleton(self) -> MacroSkeleton:
        return skeleton_from(self.raw["skeleton"])

    @property
    def lr_skeleton(self) -> Optional[MacroSkeleton]:
        d = self.raw["proxy"]["lr_skeleton"]
        if d is None:
            return None
        return skeleton_from(_merge(DEFAULTS["skeleton"], d, "proxy.lr_skeleton."), "proxy.lr_skeleton")


def default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover - non-Linux
        return max(1, os.cpu_count() or 1)


def build_config(overrides: dict, env: Optional[dict] = None) -> RunConfig:
    """Defaults <- config document <- environment; then validate."""
    if not isinstance(overrides, dict):
        raise ConfigError("config document must be a JSON object")
    raw = _merge(DEFAULTS, overrides, "")
    env = os.environ if env is None else env
    if env.get("MONAS_SEED") not in (None, ""):
        try:
            raw["seed"] = int(env["MONAS_SEED"])
        except ValueError:
            raise ConfigError(f"MONAS_SEED must be an integer, got {env['MONAS_SEED']!r}") from None
    if env.get("MONAS_WORKERS") not in (None, ""):
        try:
            raw["workers"] = int(env["MONAS_WORKERS"])
        except ValueError:
            raise ConfigError(f"MONAS_WORKERS must be an integer, got {env['MONAS_WORKERS']!r}") from None
    if raw["workers"] is None:
        raw["workers"] = default_workers()
    cfg = RunConfig(raw)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    raw = cfg.raw
    if raw["subcommand"] not in SUBCOMMANDS:
        raise ConfigError(f"subcommand must be one of {', '.join(SUBCOMMANDS)}, got {raw['subcommand']!r}")
    if raw["log_level"] not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        raise ConfigError(f"log_level must be DEBUG, INFO, WARNING or ERROR, got {raw['log_level']!r}")
    _int(raw["seed"], "seed", 0)
    _int(raw["workers"], "workers", 1)
    _int(raw["space"]["num_nodes"], "space.num_nodes", 2)
    ops = raw["space"]["ops"]
    if not isinstance(ops, list) or not ops:
        raise ConfigError("space.ops must be a non-empty list of operator names")
    try:
        cfg.ops
    except ValueError as exc:
        raise ConfigError(f"space.ops: {exc}") from None
    cfg.skeleton
    cfg.lr_skeleton
    p = raw["proxy"]
    _int(p["batch_size"], "proxy.batch_size", 1)
    _int(p["ntk_index"], "proxy.ntk_index", 0)
    if p["ntk_index"] > p["batch_size"] - 1:
        raise ConfigError("proxy.ntk_index must be <= proxy.batch_size - 1")
    _int(p["lr_samples"], "proxy.lr_samples", 1)
    _int(p["repetitions"], "proxy.repetitions", 1)
    s = raw["search"]
    _float(s["lambda_flops"], "search.lambda_flops")
    _float(s["mu_latency"], "search.mu_latency")
    _int(s["prune_per_edge_per_iter"], "search.prune_per_edge_per_iter", 1)
    for key in ("table", "genotype", "output", "accuracy_csv", "genotypes_file"):
        if raw[key] is not None and not isinstance(raw[key], str):
            raise ConfigError(f"{key} must be a string or null")
    if raw["sweep"] is not None:
        sw = raw["sweep"]
        if not isinstance(sw, dict) or len(sw) != 1 or next(iter(sw)) not in ("ntk_index", "batch_size"):
            raise ConfigError('sweep must look like {"ntk_index": [...]} or {"batch_size": [...]}')
        values = next(iter(sw.values()))
        if not isinstance(values, list) or not values:
            raise ConfigError("sweep values must be a non-empty list of integers")
        for v in values:
            _int(v, "sweep[]", 0)
    if not isinstance(raw["proxies"], list) or not set(raw["proxies"]) <= {"K", "R", "F", "L"} or not raw["proxies"]:
        raise ConfigError("proxies must be a non-empty subset of K, R, F, L")
    _int(raw["num_random"], "num_random", 1)
    if raw["limit"] is not None:
        _int(raw["limit"], "limit", 0)
    _int(raw["synthetic_table_seed"], "synthetic_table_seed", 0)


def load_config_file(path) -> dict:
    """Read a JSON config; ``OSError`` propagates (I/O), bad JSON is a config error."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None

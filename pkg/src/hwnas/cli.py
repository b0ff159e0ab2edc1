"""Command-line entry point.

Exit codes: 0 success, 1 configuration or validation error, 2 latency table
does not cover the network, 3 I/O failure.  Errors are reported as one JSON
line on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analysis
from .config import SUBCOMMANDS, RunConfig, build_config, load_config_file, validate
from .hw_model import (
    LatencyTable,
    MissingEntry,
    atomic_write_text,
    dump_table,
    load_table,
    save_table,
    synthetic_table,
)
from .proxies import ProxyConfig, ProxyEvaluator, flops_estimate, latency_estimate, score_cell
from .search import ConfigError, SearchConfig, run_prune_search
from .search_space import enumerate_space, format_genotype, instantiate_network, parse_genotype, random_genotype
from .seeding import derive_seed

log = logging.getLogger("hwnas")

EXIT_OK, EXIT_CONFIG, EXIT_TABLE, EXIT_IO = 0, 1, 2, 3
SYNTHETIC = "synthetic"


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 by default, which would collide with the table code
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hwnas", description="Hardware-aware zero-shot cell search.")
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND", parser_class=_Parser)

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="base seed (overrides config and MONAS_SEED)")
        p.add_argument("--workers", type=int, help="worker processes (overrides config and MONAS_WORKERS)")
        p.add_argument("--log-level", dest="log_level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
        return p

    p = add("search", "prune the supernet to a single-path cell")
    p.add_argument("--table", help=f"latency table CSV, or '{SYNTHETIC}'")
    p.add_argument("--output", help="report JSON path (default search_report.json)")

    p = add("score", "all four proxies for one genotype")
    p.add_argument("--genotype")
    p.add_argument("--table", help=f"latency table CSV, or '{SYNTHETIC}'")
    p.add_argument("--output", help="also write the JSON record here")

    p = add("latency", "table-lookup latency in ms")
    p.add_argument("--genotype")
    p.add_argument("--table", help=f"latency table CSV, or '{SYNTHETIC}'")

    p = add("flops", "FLOPs of the instantiated network")
    p.add_argument("--genotype")

    p = add("correlate", "Kendall tau of proxies against accuracies")
    p.add_argument("--accuracy", dest="accuracy_csv", help="CSV genotype,dataset,accuracy")
    p.add_argument("--sweep", help="AXIS=V1,V2,... with AXIS ntk_index or batch_size")
    p.add_argument("--table", help=f"latency table CSV, or '{SYNTHETIC}' (needed for proxy L)")
    p.add_argument("--output", help="report CSV path (default stdout)")

    p = add("spectrum", "FLOPs and latency for a list of genotypes")
    p.add_argument("--genotypes", dest="genotypes_file", help="file with one genotype per line")
    p.add_argument("--random", dest="num_random", type=int, help="number of random genotypes if no file")
    p.add_argument("--table", help=f"latency table CSV, or '{SYNTHETIC}'")
    p.add_argument("--output", help="CSV path (default stdout)")

    p = add("enumerate", "list every genotype of the space")
    p.add_argument("--limit", type=int)
    p.add_argument("--output", help="file path (default stdout)")

    p = add("make-table", "write a SYNTHETIC latency table for the configured skeleton")
    p.add_argument("--output", help="CSV path (default stdout)")
    p.add_argument("--table-seed", dest="synthetic_table_seed", type=int)
    return parser


def _parse_sweep(text: str) -> dict:
    axis, sep, values = text.partition("=")
    if not sep:
        raise ConfigError(f"sweep must look like AXIS=V1,V2,..., got {text!r}")
    try:
        return {axis.strip(): [int(v) for v in values.split(",") if v.strip()]}
    except ValueError:
        raise ConfigError(f"sweep values must be integers, got {values!r}") from None


def resolve_config(args: argparse.Namespace, env=None) -> RunConfig:
    doc = load_config_file(args.config) if args.config else {}
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    if doc.get("subcommand", args.subcommand) != args.subcommand:
        raise ConfigError(f"config is for {doc['subcommand']!r}, command line asks for {args.subcommand!r}")
    doc = dict(doc, subcommand=args.subcommand)
    cfg = build_config(doc, env)
    raw = cfg.raw
    # command-line flags sit above config and environment
    for key in ("seed", "workers", "log_level", "table", "output", "genotype", "accuracy_csv",
                "genotypes_file", "num_random", "limit", "synthetic_table_seed"):
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    if getattr(args, "sweep", None):
        raw["sweep"] = _parse_sweep(args.sweep)
    cfg = RunConfig(raw)
    validate(cfg)
    return cfg


def _table(cfg: RunConfig, required: bool) -> Optional[LatencyTable]:
    path = cfg["table"]
    if path is None:
        if required:
            raise ConfigError("this command needs a latency table (--table)")
        return None
    if path == SYNTHETIC:
        return synthetic_table(cfg.skeleton, cfg.ops, seed=cfg["synthetic_table_seed"])
    return load_table(path)


def _genotype(cfg: RunConfig):
    if not cfg["genotype"]:
        raise ConfigError("this command needs a genotype (--genotype)")
    return parse_genotype(cfg["genotype"])


def _proxy_config(cfg: RunConfig) -> ProxyConfig:
    p = cfg["proxy"]
    return ProxyConfig(
        batch_size=p["batch_size"], ntk_index=p["ntk_index"], lr_samples=p["lr_samples"], lr_skeleton=cfg.lr_skeleton
    )


def search_config(cfg: RunConfig, table: Optional[LatencyTable]) -> SearchConfig:
    p, s = cfg["proxy"], cfg["search"]
    return SearchConfig(
        lambda_flops=float(s["lambda_flops"]),
        mu_latency=float(s["mu_latency"]),
        ntk_index=p["ntk_index"],
        batch_size=p["batch_size"],
        repetitions=p["repetitions"],
        lr_samples=p["lr_samples"],
        seed=cfg["seed"],
        prune_per_edge_per_iter=s["prune_per_edge_per_iter"],
        table=table,
        objective=s["objective"],
        workers=cfg["workers"],
        lr_skeleton=cfg.lr_skeleton,
    )


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _emit(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        atomic_write_text(Path(path), text)


def cmd_search(cfg: RunConfig) -> int:
    table = _table(cfg, required=False)
    sc = search_config(cfg, table)
    genotype, report = run_prune_search(cfg.topology, cfg.ops, cfg.skeleton, sc)
    doc = report.to_dict()
    doc["space"] = cfg["space"]
    doc["skeleton"] = cfg["skeleton"]
    atomic_write_text(Path(cfg["output"] or "search_report.json"), _dumps(doc))
    print(format_genotype(genotype))
    return EXIT_OK


def cmd_score(cfg: RunConfig) -> int:
    g = _genotype(cfg)
    table = _table(cfg, required=False)
    evaluator = ProxyEvaluator(cfg.skeleton, _proxy_config(cfg), table)
    seeds = [derive_seed(cfg["seed"], rep) for rep in range(cfg["proxy"]["repetitions"])]
    vec = score_cell(g, evaluator, seeds).to_dict()
    record = {"genotype": format_genotype(g), **vec}
    text = json.dumps(record, sort_keys=True, allow_nan=False) + "\n"
    sys.stdout.write(text)
    if cfg["output"]:
        atomic_write_text(Path(cfg["output"]), text)
    return EXIT_OK


def cmd_latency(cfg: RunConfig) -> int:
    g = _genotype(cfg)
    print(repr(latency_estimate(g, _table(cfg, required=True), cfg.skeleton)))
    return EXIT_OK


def cmd_flops(cfg: RunConfig) -> int:
    g = _genotype(cfg)
    print(flops_estimate(instantiate_network(cfg.skeleton, g)))
    return EXIT_OK


def cmd_correlate(cfg: RunConfig) -> int:
    if not cfg["accuracy_csv"]:
        raise ConfigError("correlate needs an accuracy CSV (--accuracy)")
    records = analysis.load_accuracy_csv(cfg["accuracy_csv"])
    table = _table(cfg, required="L" in cfg["proxies"])
    rows = analysis.correlate_proxy(
        records,
        cfg.skeleton,
        _proxy_config(cfg),
        sweep=cfg["sweep"],
        seed=cfg["seed"],
        repetitions=cfg["proxy"]["repetitions"],
        proxies=tuple(cfg["proxies"]),
        table=table,
        workers=cfg["workers"],
    )
    _emit(analysis.dump_correlation_csv(rows), cfg["output"])
    return EXIT_OK


def cmd_spectrum(cfg: RunConfig) -> int:
    table = _table(cfg, required=True)
    if cfg["genotypes_file"]:
        lines = Path(cfg["genotypes_file"]).read_text(encoding="utf-8").splitlines()
        cells = [parse_genotype(line.strip()) for line in lines if line.strip()]
    else:
        rng = np.random.default_rng(derive_seed(cfg["seed"]))
        cells = [random_genotype(cfg.topology, cfg.ops, rng) for _ in range(cfg["num_random"])]
    pairs = analysis.flops_latency_spectrum(cells, table, cfg.skeleton)
    _emit(analysis.dump_spectrum_csv([format_genotype(c) for c in cells], pairs), cfg["output"])
    return EXIT_OK


def cmd_enumerate(cfg: RunConfig) -> int:
    limit = cfg["limit"]
    lines = []
    for i, g in enumerate(enumerate_space(cfg.topology, cfg.ops)):
        if limit is not None and i >= limit:
            break
        lines.append(format_genotype(g) + "\n")
    _emit("".join(lines), cfg["output"])
    return EXIT_OK


def cmd_make_table(cfg: RunConfig) -> int:
    table = synthetic_table(cfg.skeleton, cfg.ops, seed=cfg["synthetic_table_seed"])
    if cfg["output"]:
        save_table(table, cfg["output"])
    else:
        sys.stdout.write(dump_table(table))
    return EXIT_OK


COMMANDS = {
    "search": cmd_search,
    "score": cmd_score,
    "latency": cmd_latency,
    "flops": cmd_flops,
    "correlate": cmd_correlate,
    "spectrum": cmd_spectrum,
    "enumerate": cmd_enumerate,
    "make-table": cmd_make_table,
}
assert set(COMMANDS) == set(SUBCOMMANDS)


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "exit_code": code, "message": message}) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.subcommand is None:
            raise ConfigError(f"missing subcommand; choose one of {', '.join(SUBCOMMANDS)}")
        cfg = resolve_config(args)
        logging.basicConfig(level=cfg["log_level"], stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[cfg.subcommand](cfg)
    except MissingEntry as exc:
        return _fail(EXIT_TABLE, "missing_table_entry", str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))
    except ValueError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

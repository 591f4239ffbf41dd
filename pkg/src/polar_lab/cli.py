"""Experiment runner: config parsing, policy x seed matrices, CSV emission.

Each (suite, variant, policy, seed) cell runs independently and contributes
rows to three merged CSV files with stable schemas:

  regret.csv       suite,variant,policy,seed,checkpoint,pseudo_regret,quality_loss,latency_cost
  switches.csv     suite,variant,policy,seed,t,admitted_count
  diagnostics.csv  suite,variant,policy,seed,checkpoint,jaccard,cache_quality_loss

plus an optional trace.csv (--trace-every) and a manifest.json recording the
resolved configuration, schema version, and per-cell status.  Rows are sorted
and floats formatted deterministically, so a rerun is byte-identical.
"""
from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .core import ConfigurationError, Library, RewardParams
from .env import Environment, WorkloadSpec, generate_instance, load_profiles, sample_contexts
from .evaluate import build_ledger, cache_diagnostics, default_checkpoints, oracle_value
from .scheduler import POLICY_NAMES, run_policy

SCHEMA_VERSION = 1

REGRET_COLUMNS = [
    "suite", "variant", "policy", "seed", "checkpoint",
    "pseudo_regret", "quality_loss", "latency_cost",
]
SWITCH_COLUMNS = ["suite", "variant", "policy", "seed", "t", "admitted_count"]
DIAG_COLUMNS = [
    "suite", "variant", "policy", "seed", "checkpoint", "jaccard", "cache_quality_loss",
]
TRACE_COLUMNS = [
    "suite", "variant", "policy", "seed", "t", "task", "action", "hot", "q", "mu",
    "epoch", "phase",
]

DEFAULT_CONFIG = {
    "horizon": 100_000,
    "policies": ["polar_plus", "polar", "lru", "lfu", "static", "eps_greedy", "oracle"],
    "seeds": [0, 1, 2, 3, 4],
    "out_dir": "out",
    "jobs": 1,
    "trace_every": 0,
    "params": {
        "alpha": 0.5,
        "gamma": 0.3,
        "sigma": 0.05,
        "ridge": 1.0,
        "cache_size": 5,
        "delta": 0.05,
    },
    "epochs": {"h": 200, "kappa": 0.05, "c0": None},
    "checkpoints": {"start": 200, "factor": 2, "extra": []},
    "instance": {
        "kind": "generated",
        "n_adapters": 16,
        "d": 5,
        "cache_size": 5,
        "seed": 7,
        "diversity": 1.0,
        "overrides": {},
    },
    "probe_contexts": 2000,
    "probe_seed": 990,
}


def load_config_file(path: str | Path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: config must be a mapping")
    return data


def merge_config(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge_config(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(file_config: dict | None = None, **overrides) -> dict:
    cfg = merge_config(DEFAULT_CONFIG, file_config or {})
    cfg = merge_config(cfg, {k: v for k, v in overrides.items() if v is not None})
    unknown = [p for p in cfg["policies"] if p not in POLICY_NAMES]
    if unknown:
        raise ConfigurationError(f"unknown policies: {unknown}")
    if not cfg["seeds"]:
        raise ConfigurationError("at least one seed is required")
    return cfg


def build_instance(cfg: dict) -> tuple[Library, WorkloadSpec]:
    spec = cfg["instance"]
    if spec["kind"] == "generated":
        lib, wl, _ = generate_instance(
            spec["n_adapters"],
            spec["d"],
            spec.get("cache_size", cfg["params"]["cache_size"]),
            seed=spec["seed"],
            diversity=spec.get("diversity", 1.0),
            alpha=cfg["params"]["alpha"],
            **spec.get("overrides", {}),
        )
        return lib, wl
    if spec["kind"] == "profiles":
        lib = load_profiles(spec["path"])
        if "workload" not in spec:
            raise ConfigurationError(
                "profile instances need a workload section (n_tasks, task_means, ...)"
            )
        w = spec["workload"]
        return lib, WorkloadSpec(
            n_tasks=w["n_tasks"],
            zipf_exponent=w.get("zipf_exponent", 1.0),
            task_means=np.asarray(w["task_means"], dtype=float),
            context_noise=w.get("context_noise", 0.1),
            seed=w.get("seed", 0),
        )
    raise ConfigurationError(f"unknown instance kind {spec['kind']!r}")


def _params(cfg: dict) -> RewardParams:
    return RewardParams(**cfg["params"])


def _checkpoints(cfg: dict, horizon: int) -> list[int]:
    ck = cfg["checkpoints"]
    points = default_checkpoints(horizon, start=ck["start"], factor=ck["factor"])
    points += [int(t) for t in ck.get("extra", []) if 1 <= int(t) <= horizon]
    return sorted(set(points))


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    return str(value)


def run_cell(cfg: dict, suite: str, variant: str, policy: str, seed: int) -> dict:
    """Execute one (policy, seed) cell and return its CSV rows."""
    lib, wl = build_instance(cfg)
    params = _params(cfg)
    horizon = int(cfg["horizon"])
    env = Environment(lib, wl, params, horizon, seed)
    art = run_policy(
        policy,
        lib,
        params,
        env,
        horizon,
        h=int(cfg["epochs"]["h"]),
        kappa=float(cfg["epochs"]["kappa"]),
        c0=cfg["epochs"]["c0"],
    )
    points = _checkpoints(cfg, horizon)
    ledger = build_ledger(art, lib, params, points)
    probes, _ = sample_contexts(wl, int(cfg["probe_contexts"]), int(cfg["probe_seed"]))
    diags = cache_diagnostics(art, lib, params, ledger.oracle_cache, probes, points)

    tag = [suite, variant, policy, str(seed)]
    regret_rows = [
        tag + [row.t, row.pseudo_regret, row.quality_loss, row.latency_cost]
        for row in ledger.checkpoints
    ]
    switch_rows = [tag + [ev.t, ev.admitted] for ev in art.switch_events]
    diag_rows = [tag + [row.t, row.jaccard, row.cache_quality_loss] for row in diags]
    trace_rows = []
    stride = int(cfg["trace_every"])
    if stride > 0:
        for i in range(0, horizon, stride):
            r = art.round(i)
            trace_rows.append(
                tag + [r.t, r.task_id, r.action, r.hot, r.q, r.mu, r.epoch, r.phase]
            )
    return {
        "regret": regret_rows,
        "switches": switch_rows,
        "diagnostics": diag_rows,
        "trace": trace_rows,
        "warnings": list(art.warnings),
    }


def _cell_worker(args):
    cfg, suite, variant, policy, seed = args
    start = time.time()
    try:
        rows = run_cell(cfg, suite, variant, policy, seed)
        status = {"status": "ok", "runtime_s": round(time.time() - start, 3)}
        if rows["warnings"]:
            status["warnings"] = rows["warnings"]
        return (suite, variant, policy, seed), rows, status
    except Exception as exc:  # cell failures are recorded, not fatal mid-run
        status = {
            "status": "failed",
            "error": f"{type(exc).__name__}: {exc}",
            "runtime_s": round(time.time() - start, 3),
        }
        return (suite, variant, policy, seed), None, status


# -- suites -------------------------------------------------------------------

SUITE_NAMES = (
    "main", "scaling", "alpha", "epoch", "ablation", "cachesize", "cachelearn", "router",
)


def suite_cells(name: str, cfg: dict) -> list[tuple[dict, str, str]]:
    """Expand a suite into (cell-config, variant-label, policy-list) groups."""
    if name == "main":
        return [(cfg, "", cfg["policies"])]
    if name == "scaling":
        horizons = [6_000, 15_000, 38_000, 95_000, 225_000, 500_000]
        sub = merge_config(cfg, {"horizon": horizons[-1]})
        sub["checkpoints"] = {"start": 200, "factor": 2, "extra": horizons}
        return [(sub, "", ["polar_plus", "polar", "lru", "lfu", "oracle"])]
    if name == "alpha":
        cells = []
        for alpha in [0.1, 0.2, 0.5, 1.0]:
            sub = merge_config(cfg, {"params": {"alpha": alpha}})
            cells.append((sub, f"alpha={alpha:g}", ["polar_plus", "polar", "static"]))
        return cells
    if name == "epoch":
        cells = [(cfg, "", ["polar_plus"])]
        for h in [50, 100, 200, 500, 1000]:
            sub = merge_config(cfg, {"epochs": {"h": h}})
            cells.append((sub, f"H={h}", ["polar", "polar_plus_no_doubling"]))
        return cells
    if name == "ablation":
        policies = [
            "polar_plus",
            "polar_plus_no_doubling",
            "polar_plus_no_forced",
            "polar_plus_no_exact",
            "polar",
        ]
        return [(cfg, "", policies)]
    if name == "cachesize":
        cells = []
        for k in range(2, 8):
            sub = merge_config(cfg, {"params": {"cache_size": k}})
            cells.append((sub, f"K={k}", ["polar_plus", "polar", "lfu"]))
        return cells
    if name == "cachelearn":
        return [(cfg, "", ["polar_plus", "polar", "lru", "lfu"])]
    if name == "router":
        return [(cfg, "", ["polar", "polar_plus", "polar_ts", "polar_plus_ts"])]
    raise ConfigurationError(f"unknown suite {name!r}; choose from {SUITE_NAMES}")


# -- output -------------------------------------------------------------------


def _write_csv(path: Path, columns: list[str], rows: list[list]) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    os.replace(tmp, path)


def run_matrix(cfg: dict, suite: str | None = None) -> int:
    """Execute every cell and write merged CSVs plus a manifest.

    Returns 0 when every cell succeeded, 1 otherwise.
    """
    out_dir = Path(os.environ.get("POLAR_LAB_OUT", cfg["out_dir"]))
    out_dir.mkdir(parents=True, exist_ok=True)
    groups = suite_cells(suite, cfg) if suite else [(cfg, "", cfg["policies"])]
    suite_label = suite or ""
    jobs = []
    for sub_cfg, variant, policies in groups:
        for policy in policies:
            for seed in sub_cfg["seeds"]:
                jobs.append((sub_cfg, suite_label, variant, policy, int(seed)))

    n_workers = int(cfg.get("jobs", 1))
    results = []
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_cell_worker, jobs))
    else:
        results = [_cell_worker(job) for job in jobs]

    tables = {"regret": [], "switches": [], "diagnostics": [], "trace": []}
    statuses = {}
    failures = 0
    for key, rows, status in results:
        statuses["/".join(map(str, key))] = status
        if rows is None:
            failures += 1
            continue
        for table, content in tables.items():
            content.extend(rows[table])

    for content in tables.values():
        content.sort(key=lambda r: (r[0], r[1], r[2], int(r[3]), int(r[4])))
    _write_csv(out_dir / "regret.csv", REGRET_COLUMNS, tables["regret"])
    _write_csv(out_dir / "switches.csv", SWITCH_COLUMNS, tables["switches"])
    _write_csv(out_dir / "diagnostics.csv", DIAG_COLUMNS, tables["diagnostics"])
    if int(cfg["trace_every"]) > 0:
        _write_csv(out_dir / "trace.csv", TRACE_COLUMNS, tables["trace"])

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "created_unix": time.time(),
        "suite": suite_label,
        "config": cfg,
        "cells": statuses,
        "failures": failures,
    }
    with (out_dir / "manifest.json").open("w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return 1 if failures else 0


# -- command line ---------------------------------------------------------------


def _parse_seeds(args) -> list[int] | None:
    if args.seeds:
        lo, _, hi = args.seeds.partition("..")
        return list(range(int(lo), int(hi) + 1))
    if args.seed:
        return [int(s) for s in args.seed]
    return None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polar-lab",
        description="Run caching-and-routing experiments and emit CSV results.",
    )
    parser.add_argument("--config", type=str, help="YAML config file")
    parser.add_argument("--suite", type=str, choices=SUITE_NAMES, help="canned suite")
    parser.add_argument(
        "--policy", action="append", help="policy name (repeatable)", default=None
    )
    parser.add_argument("--seed", action="append", help="seed (repeatable)", default=None)
    parser.add_argument("--seeds", type=str, help="inclusive seed range a..b")
    parser.add_argument("--horizon", type=int, help="rounds per run")
    parser.add_argument("--out-dir", type=str, help="output directory")
    parser.add_argument("--jobs", type=int, help="parallel worker count")
    parser.add_argument("--trace-every", type=int, help="per-round trace stride")
    parser.add_argument("--profiles", type=str, help="adapter-profile CSV path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    file_cfg = load_config_file(args.config) if args.config else {}
    overrides = {
        "policies": args.policy,
        "seeds": _parse_seeds(args),
        "horizon": args.horizon,
        "out_dir": args.out_dir,
        "jobs": args.jobs,
        "trace_every": args.trace_every,
    }
    if args.profiles:
        overrides["instance"] = {"kind": "profiles", "path": args.profiles}
        file_instance = file_cfg.get("instance", {})
        if "workload" in file_instance:
            overrides["instance"]["workload"] = file_instance["workload"]
    try:
        cfg = resolve_config(file_cfg, **overrides)
        return run_matrix(cfg, suite=args.suite)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command line front end: ``run``, ``compare`` and ``sweep``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, engine
from .data_io import (ALGORITHMS, ConfigError, IngestionError, ScenarioConfig, _atomic_write,
                      export_results, load_scenario_series)

EXIT_OK, EXIT_FAULT, EXIT_USAGE = 0, 1, 2

COMPARE_COLUMNS = ["algorithm", "seed", "total_cost", "normalized_cost", "mean_qos",
                   "unmet_kwh", "status"]


def _config_help() -> str:
    lines = ["config file keys (flat 'key = value' lines, '#' starts a comment):"]
    for f in dataclasses.fields(ScenarioConfig):
        lines.append(f"  {f.name:28s} default {f.default!r}")
    return "\n".join(lines)


def parse_seeds(text: str) -> list:
    """``"3"``, ``"1,4,9"`` or ``"1..10"`` (inclusive)."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("no seeds given")
    return seeds


def _load_config(args) -> ScenarioConfig:
    overrides = {}
    if getattr(args, "algorithm", None):
        overrides["algorithm"] = args.algorithm
    if getattr(args, "seed", None) is not None:
        overrides["rng_seed"] = args.seed
    if args.config:
        cfg = ScenarioConfig.from_file(args.config, **overrides)
    else:
        cfg = ScenarioConfig(**overrides)
    cfg.validate()
    return cfg


def _write_table(rows, columns, path=None, stream=None):
    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in columns])

    if stream is not None:
        emit(stream)
    if path is not None:
        import io
        buf = io.StringIO()
        emit(buf)
        _atomic_write(Path(path), buf.getvalue())


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return v


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    try:
        result = engine.run(cfg)
    except engine.EngineFault as exc:
        out.mkdir(parents=True, exist_ok=True)
        dump = out / "fault_dump.json"
        _atomic_write(dump, json.dumps(exc.dump, indent=2) + "\n")
        print(f"run aborted: {exc}; state dump at {dump}", file=sys.stderr)
        return EXIT_FAULT
    export_results(result, out)
    print(f"{result.algorithm} seed={cfg.rng_seed} total_cost={result.total_cost:.4f} "
          f"mean_qos={result.mean_qos:.4f} terminal_q={sum(result.terminal_q):.6f}")
    return EXIT_OK


def compare_rows(cfg: ScenarioConfig, seeds, series=None) -> list:
    """All algorithms per seed on shared fleets, costs normalized by OCCMA."""
    rows = []
    for seed in seeds:
        cell = cfg.replace(rng_seed=seed)
        bundle = series if series is not None else load_scenario_series(cell)
        results = {}
        for alg in ALGORITHMS:
            try:
                results[alg] = engine.run(cell, bundle, algorithm=alg)
            except Exception as exc:  # noqa: BLE001 - marked in the table
                results[alg] = exc
        ref = results.get("occma")
        base = ref.total_cost if isinstance(ref, engine.RunResult) else float("nan")
        for alg in ALGORITHMS:
            res = results[alg]
            if isinstance(res, Exception):
                rows.append({"algorithm": alg, "seed": seed, "status": f"error: {res}"})
                continue
            rows.append({
                "algorithm": alg, "seed": seed, "total_cost": res.total_cost,
                "normalized_cost": res.total_cost / base if base > 0 else float("nan"),
                "mean_qos": res.mean_qos, "unmet_kwh": res.total_unmet_kwh, "status": "ok",
            })
    return rows


def aggregate(rows) -> list:
    out = []
    for alg in ALGORITHMS:
        ok = [r for r in rows if r["algorithm"] == alg and r.get("status") == "ok"]
        if not ok:
            continue
        for stat, fn in (("mean", np.mean), ("std", np.std)):
            out.append({"algorithm": alg, "seed": stat, "status": f"n={len(ok)}",
                        **{c: float(fn([r[c] for r in ok]))
                           for c in ("total_cost", "normalized_cost", "mean_qos", "unmet_kwh")}})
    return out


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    try:
        seeds = parse_seeds(args.seeds)
    except ValueError as exc:
        print(f"bad --seeds: {exc}", file=sys.stderr)
        return EXIT_USAGE
    rows = compare_rows(cfg, seeds)
    rows += aggregate(rows)
    path = Path(args.out) / "compare.csv" if args.out else None
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
    _write_table(rows, COMPARE_COLUMNS, path, sys.stdout)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        print("sweep needs at least one value", file=sys.stderr)
        return EXIT_USAGE
    if args.param.lower() not in engine.SWEEP_PARAMETERS:
        print(f"unknown parameter {args.param!r}; choose from "
              f"{', '.join(engine.SWEEP_PARAMETERS)}", file=sys.stderr)
        return EXIT_USAGE
    rows = engine.sweep(cfg, args.param, values)
    path = Path(args.out) / "sweep.csv" if args.out else None
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
    _write_table(rows, engine.SWEEP_COLUMNS, path, sys.stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evgame", description="Online EV charging management simulator.",
        epilog=_config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="scenario config file (defaults used if omitted)")

    p = sub.add_parser("run", help="simulate one day", epilog=_config_help(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p)
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="out", help="directory for slots.csv, evs.csv, summary.json")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="all algorithms over seeds, normalized by OCCMA")
    common(p)
    p.add_argument("--seeds", default="0", help="e.g. 3, 1,4,9 or 1..10")
    p.add_argument("--out", help="also write compare.csv here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="one run per parameter value")
    common(p)
    p.add_argument("--param", required=True, help=", ".join(engine.SWEEP_PARAMETERS))
    p.add_argument("--values", required=True, help="comma separated")
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="also write sweep.csv here")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, IngestionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

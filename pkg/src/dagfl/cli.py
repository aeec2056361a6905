"""Experiment runner: config in, per-seed artifacts out.

Each run writes its own directory under --out: metrics.csv, summary.json,
the exact config snapshot it used, the final model, and (for the ledger
system) a DAG dump. A manifest ties the invocation together; with --sweep
an aggregated table lands next to it. Exit codes: 0 ok, 2 config error,
3 a run ended starved (watchdog).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time

from .config import (ConfigError, ExperimentConfig, SYSTEMS, apply_overrides,
                     load_config, set_field, snapshot, validate)
from .ledger import dump_dag
from .model import save_params
from .simulator import make_runner

SWEEP_COLUMNS = ("parameter", "value", "system", "seed", "final_accuracy",
                 "mean_tips", "r0_over_r", "attack_success_rate")


def run_id(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(snapshot(cfg).encode()).hexdigest()[:12]


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse seed list {text!r}") from None
    if not seeds:
        raise ConfigError("empty seed list")
    if any(s < 0 for s in seeds):
        raise ConfigError("seeds must be >= 0")
    return seeds


def _parse_sweep(text: str) -> tuple[str, list[str]]:
    if "=" not in text:
        raise ConfigError(f"sweep spec {text!r} is not KEY=V1,V2,...")
    key, raw = text.split("=", 1)
    values = [v.strip() for v in raw.split(",") if v.strip()]
    if not values:
        raise ConfigError(f"sweep over {key!r} has no values")
    return key.strip(), values


def _plan(args) -> list[tuple[ExperimentConfig, str | None, str | None]]:
    """All (config, sweep key, sweep value) combinations this invocation runs."""
    base = load_config(args.config) if args.config else ExperimentConfig()
    apply_overrides(base, args.set)
    if args.system:
        base.system = args.system
    seeds = _parse_seeds(args.seeds)
    variants: list[tuple[ExperimentConfig, str | None, str | None]] = []
    if args.sweep:
        key, values = _parse_sweep(args.sweep)
        for value in values:
            for seed in seeds:
                cfg = dataclasses.replace(base)
                set_field(cfg, key, value)
                cfg.seed = seed
                variants.append((cfg, key, value))
    else:
        for seed in seeds:
            cfg = dataclasses.replace(base)
            cfg.seed = seed
            variants.append((cfg, None, None))
    for cfg, _, _ in variants:
        validate(cfg)
    return variants


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="dagfl",
        description="Run DAG-ledger federated learning experiments "
                    "and baselines, deterministically per seed.",
    )
    parser.add_argument("--config", help="INI config file; defaults apply otherwise")
    parser.add_argument("--system", choices=SYSTEMS,
                        help="override the configured system")
    parser.add_argument("--seeds", default="0",
                        help="comma-separated seed list (default: 0)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field (repeatable)")
    parser.add_argument("--out", default="runs", help="output directory")
    parser.add_argument("--sweep", metavar="KEY=V1,V2,...",
                        help="run every listed value of one field per seed")
    args = parser.parse_args(argv)

    try:
        variants = _plan(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    os.makedirs(args.out, exist_ok=True)
    manifest_runs = []
    sweep_rows = []
    exit_code = 0
    for cfg, sweep_key, sweep_value in variants:
        runner = make_runner(cfg)
        log = runner.run()
        rid = run_id(cfg)
        parts = [cfg.system, f"s{cfg.seed}"]
        if sweep_key:
            parts.append(f"{sweep_key}-{sweep_value}")
        parts.append(rid[:8])
        run_dir = os.path.join(args.out, "-".join(parts))
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "config.ini"), "w") as f:
            f.write(snapshot(cfg))
        log.write_csv(os.path.join(run_dir, "metrics.csv"))
        log.write_summary(os.path.join(run_dir, "summary.json"))
        save_params(runner.final_model, os.path.join(run_dir, "model.txt"))
        if hasattr(runner, "global_dag"):
            dump_dag(runner.global_dag, os.path.join(run_dir, "dag.jsonl"))

        summary = log.summary
        print(f"{cfg.system} seed={cfg.seed}"
              + (f" {sweep_key}={sweep_value}" if sweep_key else "")
              + f": accuracy={summary['final_accuracy']:.4f}"
              + f" iterations={summary['iterations']}"
              + f" end={summary['end_reason']} -> {run_dir}")
        if summary["end_reason"] == "starved":
            print(f"warning: run {rid} starved (no progress for "
                  f"{cfg.watchdog}s)", file=sys.stderr)
            exit_code = 3
        manifest_runs.append({
            "run_id": rid,
            "dir": os.path.basename(run_dir),
            "system": cfg.system,
            "seed": cfg.seed,
            "sweep_key": sweep_key,
            "sweep_value": sweep_value,
            "end_reason": summary["end_reason"],
        })
        if sweep_key:
            sweep_rows.append((
                sweep_key, sweep_value, cfg.system, cfg.seed,
                summary["final_accuracy"],
                summary.get("mean_tips_stationary"),
                summary.get("r0_over_r"),
                summary.get("attack_success_rate"),
            ))

    manifest = {
        "created": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "argv": list(argv) if argv is not None else sys.argv[1:],
        "runs": manifest_runs,
    }
    with open(os.path.join(args.out, "manifest.json"), "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")

    if sweep_rows:
        with open(os.path.join(args.out, "sweep.csv"), "w") as f:
            f.write(",".join(SWEEP_COLUMNS) + "\n")
            for row in sweep_rows:
                f.write(",".join(_cell(v) for v in row) + "\n")
    return exit_code


if __name__ == "__main__":
    sys.exit(main())

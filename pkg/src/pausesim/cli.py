"""Command-line entry point: ``pausesim run | verify | sweep``.

Exit codes: 0 success, 1 invalid config or arguments, 2 runtime failure,
3 a verification check failed.  Failures print one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import sys
from pathlib import Path

from pausesim import metrics, sim, verify
from pausesim.config import (
    ConfigError,
    ExperimentConfig,
    dumps,
    echo_config,
    from_dict,
    load_config,
    to_dict,
    tomllib,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3

SWEEP_KEYS = {"alpha": "reward", "gamma": "reward", "eps_bar": "privacy"}


def _error(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True), file=sys.stderr)


def regret_bound(cfg: ExperimentConfig):
    """``n -> bound`` for the configured population, or None where it is undefined."""
    population = sim.synthesize_population(cfg, sim.stream(cfg.run.seeds[0], "population"))
    delta = population.min_gap()
    if not (delta > 0 and math.isfinite(delta)):
        return None
    rc = sim.reward_config(cfg, population)
    dmax = metrics.delta_max_bound(population.expected_ratio(), rc, cfg.population.m)
    K, m = population.num_users, cfg.population.m
    return lambda n: metrics.log_regret_bound(K, m, delta, dmax, n)


def run_to_dir(cfg: ExperimentConfig, out: Path) -> list[dict]:
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    results = sim.run_experiment(cfg)
    rounds_path = out / "rounds.csv"
    with open(rounds_path, "w", newline="", encoding="utf-8") as fh:
        sim.write_rounds_csv(results, fh)
    rows = metrics.read_rounds_csv(rounds_path)
    checkpoints = cfg.run.checkpoints or ([cfg.run.rounds] if cfg.run.rounds else [])
    bound = regret_bound(cfg) if cfg.run.track_regret else None
    summary = metrics.summarize(rows, cfg.run.window, checkpoints, bound)
    metrics.write_summary_csv(summary, out / "summary.csv")
    return summary


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output)
    summary = run_to_dir(cfg, out)
    for row in summary:
        print(
            f"{row['policy']:>16} n={row['checkpoint_n']}: accuracy {row['mean_accuracy']:.4f}, "
            f"cum latency {row['mean_cum_latency']:.2f}, max leakage {row['max_leakage']:.4g}, "
            f"regret {row['mean_regret']:.4g}"
        )
    print(f"wrote {out / 'rounds.csv'} and {out / 'summary.csv'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.scale <= 0:
        raise ConfigError("--scale", "must be positive")
    checks = verify.run_suite(args.suite, args.scale, args.seed)
    for check in checks:
        print(check.line())
        for row in check.table:
            print("    " + "  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def load_grid(path: str) -> dict[str, list]:
    with open(path, "rb") as fh:
        grid = tomllib.load(fh)
    for key, values in grid.items():
        if key not in SWEEP_KEYS:
            raise ConfigError(key, f"unknown sweep key; expected one of {sorted(SWEEP_KEYS)}")
        if not isinstance(values, list) or not values:
            raise ConfigError(key, "must be a nonempty list")
    return grid


def cmd_sweep(args) -> int:
    base = load_config(args.config)
    grid = load_grid(args.grid)
    out_root = Path(args.out or base.output)
    keys = list(grid)
    combined = []
    for values in itertools.product(*(grid[k] for k in keys)):
        data = to_dict(base)
        for key, value in zip(keys, values):
            data[SWEEP_KEYS[key]][key] = value
        cfg = from_dict(data)
        label = "_".join(f"{k}={v}" for k, v in zip(keys, values)) or "base"
        for row in run_to_dir(cfg, out_root / label):
            combined.append({**dict(zip(keys, values)), **row})
        print(f"finished {label}")
    if combined:
        with open(out_root / "sweep_summary.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(combined[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(combined)
    return EXIT_OK


def cmd_config(args) -> int:
    print(dumps(load_config(args.config) if args.config else ExperimentConfig()), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pausesim", description="Privacy-aware FL user selection simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a TOML config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="output directory (default: the config's output key)")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="run an oracle suite")
    ver.add_argument("--suite", required=True, choices=sorted(verify.SUITES) + ["all"])
    ver.add_argument("--scale", type=float, default=1.0, help="shrink instance counts and horizons")
    ver.add_argument("--seed", type=int, default=0)
    ver.set_defaults(func=cmd_verify)

    sweep = sub.add_parser("sweep", help="cartesian sweep over alpha / gamma / eps_bar")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--grid", required=True, help="TOML file of lists, e.g. alpha = [0.0, 0.5]")
    sweep.add_argument("--out")
    sweep.set_defaults(func=cmd_sweep)

    show = sub.add_parser("config", help="print the effective config")
    show.add_argument("--config")
    show.set_defaults(func=cmd_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        _error("validation", str(exc), key=exc.key, line=exc.line)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        _error("validation", f"file not found: {exc.filename}")
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every other failure maps to the runtime exit code
        _error("runtime", f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""
Command-line entry point.

    stackelucb run   --config cfg.yaml [--seed N] [--out DIR]
    stackelucb sweep --config cfg.yaml --seeds 0..9 [--jobs K] [--out DIR]
    stackelucb plot  --in DIR --kind time_avg_regret|reward_curve|congestion_map [--out FILE]

Exit codes: 0 success, 2 configuration error, 3 numerical-consistency error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import load_config
from .errors import ConfigError, InputError, NumericalConsistencyError, SetupError
from .runner import PLOT_KINDS, aggregate, emit_plot_data, load_summaries, run_experiment, sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"0..9"`` (inclusive) or ``"1,4,7"``."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            a, b = int(a), int(b)
            if b < a:
                raise ValueError
            return list(range(a, b + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad seed range {text!r}; use N, A..B or a comma list") from None


def _apply_overrides(cfg, args):
    params = dict(cfg.env_params)
    for key, attr, env in (("network", "network", "traffic"), ("scale", "scale", "traffic"),
                           ("park", "park", "wildlife")):
        value = getattr(args, attr, None)
        if value is None:
            continue
        if cfg.env != env:
            raise ConfigError(f"--{key} only applies to the {env} environment")
        if key != "scale":
            if not Path(value).exists():
                raise ConfigError(f"{key} file not found: {value}")
            value = str(Path(value).resolve())
        elif not float(value) > 0:
            raise ConfigError("--scale must be positive")
        params[key] = value
    return replace(cfg, env_params=params)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stackelucb", description="Repeated-game learning experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def fixtures(p):
        p.add_argument("--network", help="road network file (traffic)")
        p.add_argument("--scale", type=float, help="capacity and demand scale (traffic)")
        p.add_argument("--park", help="park fixture (wildlife)")

    run = sub.add_parser("run", help="one seeded run")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", default="results")
    fixtures(run)

    sw = sub.add_parser("sweep", help="several seeds, aggregated")
    sw.add_argument("--config", required=True)
    sw.add_argument("--seeds", required=True)
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--out", default="results")
    fixtures(sw)

    pl = sub.add_parser("plot", help="plot tables from saved run summaries")
    pl.add_argument("--in", dest="in_dir", required=True)
    pl.add_argument("--kind", required=True, choices=PLOT_KINDS)
    pl.add_argument("--out")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "plot":
            summaries = load_summaries(args.in_dir)
            out = args.out or str(Path(args.in_dir) / f"{args.kind}.csv")
            print(emit_plot_data(summaries, args.kind, out))
            return EXIT_OK
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "run":
            _, summary = run_experiment(cfg, args.seed, args.out)
            print(f"seed {summary.seed}: cumulative reward {summary.cumulative_reward:.6g}, "
                  f"final regret {summary.final_regret:.6g}")
            return EXIT_OK
        seeds = parse_seeds(args.seeds)
        if not seeds:
            raise ConfigError("no seeds given")
        summaries = sweep(cfg.with_seeds(seeds), jobs=args.jobs, out_dir=args.out)
        table = aggregate(summaries)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "aggregate.json").write_text(json.dumps(table, indent=2, sort_keys=True))
        print(json.dumps(table, indent=2, sort_keys=True))
        return EXIT_OK
    except (ConfigError, SetupError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalConsistencyError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

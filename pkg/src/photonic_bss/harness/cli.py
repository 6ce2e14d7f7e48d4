"""Command-line entry point: one subcommand per experiment.

    photonic-bss ill-condition-sweep --config configs/ill_condition_sweep.toml --out results/ill
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .config import EXPERIMENTS, ConfigError, ExperimentConfig, load_config, with_overrides
from .experiments import run_experiment
from .records import write_record

log = logging.getLogger("photonic_bss")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="photonic-bss",
                                     description="Run photonic BSS experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name.replace("_", "-"))
        p.set_defaults(experiment=name)
        p.add_argument("--config", help="TOML config; defaults apply when omitted")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--mode", help="ideal | quantized:N | physical:dither-on | physical:dither-off")
        p.add_argument("--points", type=int, help="number of sweep points")
        p.add_argument("--workers", type=int, help="parallel worker processes")
        p.add_argument("--svg", action="store_true", help="also write an SVG line plot")
    return parser


def resolve_config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
        if cfg.experiment != args.experiment:
            raise ConfigError(f"{args.config} configures {cfg.experiment!r}, "
                              f"not {args.experiment!r}")
    else:
        cfg = ExperimentConfig(args.experiment)
    return with_overrides(cfg, seed=args.seed, out=args.out, mode=args.mode,
                          points=args.points, workers=args.workers)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        record = run_experiment(cfg)
        paths = write_record(record, cfg.output_dir, svg=args.svg)
    except (ConfigError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for failure in record.failures:
        log.warning("point failed: %s", failure)
    print(f"{cfg.experiment}: {record.n_points} points in {record.wall_time_s:.1f} s "
          f"-> {paths['csv']}")
    return 1 if record.failures else 0


if __name__ == "__main__":
    sys.exit(main())

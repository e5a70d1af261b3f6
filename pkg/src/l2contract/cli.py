"""Command-line entry point: ``l2contract <kind> [options]``."""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import KINDS, ConfigError, ExperimentConfig
from .runner import emit_csv, emit_plot_data, run, run_on_data


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="l2contract",
        description="Simulation experiments for tests and posterior contraction "
                    "in Gaussian models with unknown variance.")
    sub = parser.add_subparsers(dest="kind", required=True, metavar="KIND")
    for kind in KINDS:
        sp = sub.add_parser(kind, help=f"run the {kind} experiment")
        sp.add_argument("--config", type=Path, help="YAML config file (see --print-defaults)")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker processes; results do not depend on this")
        sp.add_argument("--print-defaults", action="store_true",
                        help="print the full configuration template and exit")
        if kind in ("highdim", "spline"):
            sp.add_argument("--data", type=Path,
                            help="delimited numeric file to analyse instead of simulating")
    return parser


def load_data(path: Path) -> np.ndarray:
    text = path.read_text(encoding="utf-8")
    delimiter = "," if "," in text else None
    return np.loadtxt(path, delimiter=delimiter, comments="#", ndmin=2)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            cfg = ExperimentConfig.from_yaml(args.config.read_text(encoding="utf-8"), args.kind)
            if cfg.kind != args.kind:
                raise ConfigError([("kind", f"config is for {cfg.kind!r} but {args.kind!r} was requested")])
        else:
            cfg = ExperimentConfig.default(args.kind)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.print_defaults:
            sys.stdout.write(cfg.to_yaml())
            return 0
        if args.threads < 1:
            raise ConfigError([("--threads", "must be >= 1")])
        cfg.validate()
    except ConfigError as exc:
        for name, msg in exc.errors:
            print(f"config error: {name}: {msg}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2

    try:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        if getattr(args, "data", None) is not None:
            rows = run_on_data(cfg, load_data(args.data))
            emit_csv(rows, args.out_dir / f"{cfg.kind}_posterior.csv")
        elif args.threads > 1:
            with ProcessPoolExecutor(max_workers=args.threads) as pool:
                rows = run(cfg, pool)
        else:
            rows = run(cfg)
        if getattr(args, "data", None) is None:
            emit_csv(rows, args.out_dir / f"{cfg.kind}.csv")
            emit_plot_data(rows, args.out_dir / f"{cfg.kind}_plot.csv")
        (args.out_dir / f"{cfg.kind}_config.yaml").write_text(cfg.to_yaml(), encoding="utf-8")
    except Exception as exc:  # report any failure as a diagnostic and nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

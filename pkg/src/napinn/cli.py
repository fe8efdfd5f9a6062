"""Command-line entry point for the experiment harness.

Subcommands: generate | train | evaluate | matrix | sweep | plots. Every
subcommand accepts --config (YAML experiment file), --out (output directory)
and --seed-offset. Exit codes: 0 success, 1 partial failure, 2 config error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness import (
    Cell,
    ConfigError,
    ExperimentConfig,
    emit_plot_data,
    load_or_generate_field,
    matrix_cells,
    run_cell,
    run_matrix,
    sweep_rejection_cost,
)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2


def _common_args(sub):
    sub.add_argument("--config", type=Path, help="YAML experiment config")
    sub.add_argument("--out", type=Path, default=Path("out"),
                     help="output directory (default: out)")
    sub.add_argument("--seed-offset", type=int, default=None,
                     help="added to every seed in the config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="napinn",
        description="Noise-adaptive PINN benchmark harness",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("generate", help="generate and cache reference fields")
    _common_args(gen)

    tr = subs.add_parser("train", help="train a single (benchmark, method, "
                                       "ratio, seed) cell")
    _common_args(tr)
    tr.add_argument("--benchmark", required=True)
    tr.add_argument("--method", required=True)
    tr.add_argument("--ratio", type=float, default=None,
                    help="outlier ratio; omit for the clean-reference mode")
    tr.add_argument("--seed", type=int, default=0)

    ev = subs.add_parser("evaluate", help="re-evaluate a finished cell")
    _common_args(ev)
    ev.add_argument("--benchmark", required=True)
    ev.add_argument("--method", required=True)
    ev.add_argument("--ratio", type=float, default=None)
    ev.add_argument("--seed", type=int, default=0)

    mx = subs.add_parser("matrix", help="run the full experiment matrix")
    _common_args(mx)
    mx.add_argument("--jobs", type=int, default=1,
                    help="parallel worker processes (default 1)")

    sw = subs.add_parser("sweep", help="rejection-cost sweep on Allen-Cahn")
    _common_args(sw)

    pl = subs.add_parser("plots", help="emit figure-data CSVs from results")
    _common_args(pl)
    return parser


def load_config(args) -> ExperimentConfig:
    if args.config is not None:
        cfg = ExperimentConfig.from_yaml(args.config)
    else:
        cfg = ExperimentConfig(benchmarks=["allen_cahn"],
                               methods=["napinn", "vanilla"],
                               ratios=[0.10], seeds=[])
    if args.seed_offset is not None:
        cfg.seed_offset = args.seed_offset
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plots":
            written = emit_plot_data(args.out)
            for path in written:
                print(path)
            return EXIT_OK

        cfg = load_config(args)

        if args.command == "generate":
            for b in cfg.benchmarks:
                for s in cfg.seeds:
                    load_or_generate_field(b, cfg.solver_grid[b], cfg.snapshots,
                                           s, Path(args.out) / "cache")
                    if b != "burgers":
                        break  # field does not depend on the seed
            print(f"reference fields cached under {args.out}/cache")
            return EXIT_OK

        if args.command in ("train", "evaluate"):
            cell = Cell(args.benchmark, args.method, args.ratio, args.seed,
                        cfg.lambda_rej)
            report = run_cell(cfg, cell, Path(args.out))
            print(f"rMAE={report.rmae:.6f} rMSE={report.rmse:.6f}"
                  + (f" recall={report.recall:.3f} precision={report.precision:.3f}"
                     if report.recall is not None else ""))
            return EXIT_OK

        if args.command == "matrix":
            reports, failures = run_matrix(cfg, args.out, jobs=args.jobs)
            print(f"{len(reports)} cells finished, {len(failures)} failed; "
                  f"summary at {args.out}/summary.csv "
                  f"[{cfg.scale} scale, {len(cfg.seeds)} seed(s)]")
            for cell, _ in failures:
                print(f"FAILED: {cell}", file=sys.stderr)
            return EXIT_PARTIAL if failures else EXIT_OK

        if args.command == "sweep":
            rows = sweep_rejection_cost(cfg, args.out)
            for lam, a, m, f in rows:
                print(f"lambda_rej={lam:g}: rMAE={a:.4f} rMSE={m:.4f} "
                      f"rejected={f:.3f}")
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

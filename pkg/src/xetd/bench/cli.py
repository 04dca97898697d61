"""Command-line entry point: ``xetd run|sweep|analyze|baird``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from ..errors import ConfigError, OutputError, XetdError
from ..learners import LearnerConfig
from .config import ExperimentConfig, config_from_dict, load_config, read_toml, sweep_axes
from .engine import ALGORITHMS, EMPHASIS_SOURCES
from .harness import analyze, baird_grid, run_experiment, sweep
from .io import emit_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

log = logging.getLogger("xetd")


def _cmd_run(args) -> int:
    config = load_config(args.config)
    records = run_experiment(config, workers=args.workers)
    emit_csv(records, args.out)
    print(f"wrote {len(records)} runs to {args.out}")
    return EXIT_OK


def _write_summary(result, path) -> None:
    fields = ("algorithm", "alpha_w", "alpha_theta", "mc_beta", "final_mean_rmse_v",
              "final_std_rmse_v", "diverged_runs", "best")
    best = set(result.best.values())
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(fields)
            for i, row in enumerate(result.rows):
                writer.writerow([row.algorithm] + [f"{getattr(row, f):.17g}" for f in fields[1:6]]
                                + [row.diverged_runs, int(i in best)])
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def _cmd_sweep(args) -> int:
    doc = read_toml(args.config)
    base = config_from_dict(doc)
    alphas, betas = sweep_axes(doc)
    algorithms = doc.get("sweep", {}).get("algorithms", [base.algorithm])
    grid = []
    for algo in algorithms:
        grid.extend(baird_grid(base.replace(algorithm=algo), alphas, betas))
    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create {args.out}: {exc}") from exc
    result = sweep(grid, workers=args.workers)
    _write_summary(result, os.path.join(args.out, "summary.csv"))
    for algo, idx in sorted(result.best.items()):
        emit_csv(result.records[idx], os.path.join(args.out, f"best_{algo}.csv"))
        row = result.rows[idx]
        print(f"{algo}: alpha_w={row.alpha_w:.6g} alpha_theta={row.alpha_theta:.6g} "
              f"final rmse_v={row.final_mean_rmse_v:.6g} +- {row.final_std_rmse_v:.3g}")
    missing = sorted(set(algorithms) - set(result.best))
    for algo in missing:
        print(f"{algo}: every configuration diverged")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    config = load_config(args.config)
    algorithm = args.algo or config.algorithm
    reports = analyze(config.mdp_spec, algorithm, config.learner, config.emphasis_source)
    for report in reports:
        print(report.to_text())
    if args.json:
        try:
            with open(args.json, "w") as fh:
                json.dump([r.to_dict() for r in reports], fh, indent=2)
        except OSError as exc:
            raise OutputError(f"cannot write {args.json}: {exc}") from exc
    return EXIT_OK


def _cmd_baird(args) -> int:
    try:
        learner = LearnerConfig(
            n=args.n, alpha_w=args.alpha_w, alpha_theta=args.alpha_theta, beta=args.beta,
            rho_bar=args.rho_bar,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    config = ExperimentConfig(
        mdp_spec="baird_modified",
        algorithm=args.algo,
        learner=learner,
        total_steps=args.steps,
        num_runs=args.runs,
        seed_base=args.seed,
        eval_every=args.eval_every,
        emphasis_source=args.emphasis_source,
        setting=args.setting,
    )
    records = run_experiment(config, workers=args.workers)
    emit_csv(records, args.out)
    print(f"wrote {len(records)} runs to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xetd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a configured experiment and write a CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="step-size sweep; writes summary.csv and best_<algo>.csv")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("analyze", help="print stability reports for the configured problem")
    p.add_argument("--config", required=True)
    p.add_argument("--algo", choices=ALGORITHMS + ("reversed_td", "reversed_td_mc"))
    p.add_argument("--json", help="also write the reports as JSON")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("baird", help="runs on the modified Baird counterexample")
    p.add_argument("--algo", required=True, choices=ALGORITHMS)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--steps", type=int, default=200_000)
    p.add_argument("--eval-every", type=int, default=100)
    p.add_argument("--alpha-w", type=float, default=2.0**-8)
    p.add_argument("--alpha-theta", type=float, default=2.0**-8)
    p.add_argument("--beta", type=float, default=0.0, help="Monte Carlo weight for xetd_n_mc")
    p.add_argument("--rho-bar", type=float, default=float("inf"))
    p.add_argument("--emphasis-source", choices=EMPHASIS_SOURCES, default="learned")
    p.add_argument("--setting", choices=("iid", "sequential"), default="iid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_baird)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OutputError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, XetdError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

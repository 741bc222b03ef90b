"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from .experiment import RunConfig, lambda_sweep, load_config, run_experiment, run_method, make_usecase, surrogates, ExperimentReport
from .icnn import TrainHyper, adam_train, generate_training_data, save_icnn
from .timeseries import synth_lmp, synth_pv, write_timeseries_csv


def _build_parser():
    parser = argparse.ArgumentParser(prog="bessopt", description="Battery dispatch optimization toolkit")
    parser.add_argument("--config", help="TOML run configuration")
    parser.add_argument("--seed", type=int, help="override the scenario seed")
    parser.add_argument("--out-dir", help="override the output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-icnn", help="train one surrogate and emit its model JSON")
    p.add_argument("--side", choices=("charge", "discharge"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("solve", help="run a single method")
    p.add_argument("--method", choices=("nlp", "linear", "relaxed_icnn", "bigm_icnn"), required=True)

    sub.add_parser("experiment", help="run every configured method and write reports")

    p = sub.add_parser("sweep-lambda", help="sweep the relaxation penalty")
    p.add_argument("--grid", help="comma-separated penalty values (default log grid)")

    p = sub.add_parser("synth-data", help="emit a synthetic series as CSV")
    p.add_argument("--kind", choices=("pv", "lmp"), default="pv")
    p.add_argument("--steps", type=int, default=192)
    p.add_argument("--peak-kw", type=float, default=50.0)
    p.add_argument("--out", required=True)
    return parser


def _load(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.out_dir is not None:
        config.out_dir = args.out_dir
    return config


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return _dispatch(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    config = _load(args)
    out_dir = Path(config.out_dir)

    if args.command == "synth-data":
        seed = config.seed
        if args.kind == "pv":
            series = synth_pv(seed, args.steps, args.peak_kw)
        else:
            series = synth_lmp(seed, args.steps, config.battery.dt_hours)
        write_timeseries_csv(args.out, series)
        print(f"wrote {len(series)} samples to {args.out}")
        return 0

    if args.command == "train-icnn":
        if args.points is not None:
            config.train_points = args.points
        if args.epochs is not None:
            config.train_epochs = args.epochs
        data = generate_training_data(config.battery, args.side, config.train_points)
        offset = 101 if args.side == "charge" else 202
        hyper = TrainHyper(epochs=config.train_epochs, seed=config.seed + offset)
        net = adam_train(data, list(config.icnn_widths), hyper)
        save_icnn(net, args.out)
        print(f"trained {args.side} surrogate -> {args.out}")
        return 0

    if args.command == "solve":
        usecase = make_usecase(config)
        nets = surrogates(config) if args.method in ("relaxed_icnn", "bigm_icnn") else None
        row, _ = run_method(args.method, config, usecase, nets)
        report = ExperimentReport(rows=[row], scenario={"use_case": config.use_case, "seed": config.seed})
        out_dir.mkdir(parents=True, exist_ok=True)
        report.write_csv(out_dir / "report.csv")
        report.write_json(out_dir / "report.json")
        print(f"{row.method}: predicted={row.predicted:.6g} actual={row.actual:.6g} time={row.solver_time_s:.3f}s [{row.status}]")
        return 0

    if args.command == "experiment":
        report = run_experiment(config)
        for row in report.rows:
            gap = "-" if row.gap is None else f"{row.gap:.3g}"
            print(f"{row.method:>13}: time={row.solver_time_s:8.3f}s predicted={row.predicted:12.6g} actual={row.actual:12.6g} gap={gap} [{row.status}]")
        print(f"reports in {out_dir}")
        return 0

    if args.command == "sweep-lambda":
        grid = None
        if args.grid:
            grid = np.asarray([float(tok) for tok in args.grid.split(",")], dtype=float)
        report = lambda_sweep(config, grid)
        for row in report.rows:
            print(f"lambda={row.lam:9.3e}: predicted={row.predicted:12.6g} actual={row.actual:12.6g} gap={row.gap:.3g}")
        print(f"sweep in {out_dir}")
        return 0

    raise ValueError(f"unhandled command {args.command!r}")


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()

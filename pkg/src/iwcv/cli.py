"""Command-line entry point: ``iwcv <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .datasets import read_feature_csv
from .stats_core import SeededStream
from .weights import (
    KliepConfig,
    KmmConfig,
    WeightMethod,
    kliep_weights,
    kmm_weights,
    knn_bandwidth,
    parametric_gaussian_weights,
)

DEFAULT_C_GRID = (1, 2, 5, 10, 20, 50, 100)


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _common(p):
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--reps", type=int, help="repetitions per gamma")
    p.add_argument("--gamma", type=_floats, help="comma-separated gamma grid")
    p.add_argument("--out", type=Path, help="output directory (file for 'weights')")
    p.add_argument("--config", type=Path, help="key = value config file")


def _sweep_flags(p):
    p.add_argument("--weights", choices=[m.value for m in WeightMethod],
                   help="weight estimator")
    p.add_argument("--lambda-steps", type=int, help="number of log-spaced lambda values")
    p.add_argument("--top-fraction", type=float, help="fraction of largest weight variances")
    p.add_argument("--parallel", type=int, help="worker processes")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")


def build_parser():
    parser = argparse.ArgumentParser(prog="iwcv", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("example-curves", help="analytic curves for the 1-D example")
    _common(p)
    p.add_argument("--c-grid", type=_floats, default=list(DEFAULT_C_GRID))

    p = sub.add_parser("sweep-synthetic", help="repetition sweep on the 2-D synthetic setting")
    _common(p)
    _sweep_flags(p)
    p.add_argument("--posterior", choices=["bvn_cdf", "product"])

    p = sub.add_parser("sweep-ozone", help="repetition sweep on the ozone table")
    _common(p)
    _sweep_flags(p)
    p.add_argument("--csv", type=Path, help="ozone table (date, 72 features, 0/1 label)")
    p.add_argument("--components", type=int)
    p.add_argument("--per-class", type=int)

    p = sub.add_parser("weights", help="estimate importance weights from two CSV files")
    _common(p)
    p.add_argument("--source", type=Path, required=True)
    p.add_argument("--target", type=Path, required=True)
    p.add_argument("--method", choices=["gaussian", "kmm", "kliep"], default="gaussian")
    p.add_argument("--knn", type=int, default=5, help="k for the bandwidth heuristic")
    return parser


def _sweep_config(args, setting):
    mapping = {"setting": setting}
    if args.config:
        mapping.update(ex.parse_config_text(args.config.read_text()))
        mapping["setting"] = setting
    overrides = {
        "master_seed": args.seed, "repetitions": args.reps, "gamma_grid": args.gamma,
        "weight_estimator": args.weights, "lambda_steps": args.lambda_steps,
        "top_fraction": args.top_fraction, "parallelism": args.parallel,
    }
    if setting == "synthetic2d":
        overrides["posterior"] = args.posterior
    else:
        overrides.update({"ozone_csv": str(args.csv) if args.csv else None,
                          "n_components": args.components, "per_class_draws": args.per_class})
    mapping.update({k: v for k, v in overrides.items() if v is not None})
    return ex.config_from_mapping(mapping)


def _print_report(report):
    for s in report.summaries:
        for subset in ex.SUBSETS:
            means = "  ".join(f"{k}={v:.5f}" for k, v in s.means[subset].items())
            res = s.wilcoxon.get(subset)
            p = f"p={res.p_value:.3g}" if res else s.notes.get(subset, "")
            print(f"gamma={s.gamma:g} {subset:>3}  {means}  {p}")
    for key, path in report.paths.items():
        print(f"{key}: {path}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "example-curves":
        gammas = args.gamma or [round(0.72 + 0.02 * i, 2) for i in range(40)]
        out = args.out or Path("results")
        path = ex.run_example_curves(gammas, args.c_grid, out / "example_curves.csv")
        print(path)
        return 0

    if args.command in ("sweep-synthetic", "sweep-ozone"):
        setting = "synthetic2d" if args.command == "sweep-synthetic" else "ozone"
        cfg = _sweep_config(args, setting)
        out = args.out or Path("results")
        report = ex.run_sweep(cfg, out_dir=out, figures=not args.no_figures)
        _print_report(report)
        return 0

    xs = read_feature_csv(args.source)
    xt = read_feature_csv(args.target)
    stream = SeededStream(args.seed or 0, 0)
    if args.method == "gaussian":
        wv = parametric_gaussian_weights(xs, xt)
    else:
        bw = knn_bandwidth(xs, xt, args.knn)
        if args.method == "kmm":
            wv = kmm_weights(xs, xt, bw, KmmConfig())
        else:
            wv = kliep_weights(xs, xt, bw, KliepConfig(), stream)
    out = args.out or Path("weights.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(out, wv.weights[:, None], delimiter=",", header="weight", comments="",
               fmt="%.17g")
    info = {"method": wv.estimator_id.value, "bandwidth": wv.bandwidth, "n": len(wv),
            "mean": float(wv.weights.mean()), "variance": float(np.var(wv.weights, ddof=1))}
    out.with_suffix(".json").write_text(json.dumps(info, indent=2) + "\n")
    print(json.dumps(info))
    return 0


if __name__ == "__main__":
    sys.exit(main())

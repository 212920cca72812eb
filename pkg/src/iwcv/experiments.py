"""Repetition sweeps over the source-shift parameter, aggregation, the
top-fraction weight-variance filter, significance tests and report files.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, analytic
from .cv import ALL_ESTIMATORS, CvOutcome, LambdaGrid, run_iwcv
from .datasets import (
    POSTERIORS,
    OzoneConfig,
    OzoneTable,
    example1d_generate,
    ozone_prepare,
    ozone_sample,
    synth2d_generate,
)
from .exceptions import SweepError
from .risk import EstimatorId
from .stats_core import SeededStream, WilcoxonResult, wilcoxon_signed_rank
from .weights import WeightMethod

logger = logging.getLogger(__name__)


class Setting(str, enum.Enum):
    EXAMPLE1D = "example1d"
    SYNTHETIC2D = "synthetic2d"
    OZONE = "ozone"


SUBSETS = ("all", "top")


@dataclass(frozen=True)
class SweepConfig:
    setting: Setting = Setting.SYNTHETIC2D
    gamma_grid: tuple = (0.71, 0.9, 1.1)
    repetitions: int = 1000
    top_fraction: float = 0.10
    weight_estimator: WeightMethod = WeightMethod.PARAMETRIC_GAUSSIAN
    estimators: tuple = ALL_ESTIMATORS
    k_folds: int = 5
    grid: LambdaGrid = LambdaGrid(1e-3, 1e6, 200)
    master_seed: int = 0
    parallelism: int = 1
    n_source: int = 50
    n_target: int = 1000
    posterior: str = "product"
    ozone_csv: str | None = None
    n_components: int = 10
    per_class_draws: int = 80
    max_failure_fraction: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "setting", Setting(self.setting))
        object.__setattr__(self, "weight_estimator", WeightMethod(self.weight_estimator))
        object.__setattr__(self, "estimators", tuple(EstimatorId(e) for e in self.estimators))
        object.__setattr__(self, "gamma_grid", tuple(float(g) for g in self.gamma_grid))
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if not self.gamma_grid:
            raise ValueError("gamma_grid must not be empty")
        if not 0 < self.top_fraction <= 1:
            raise ValueError("top_fraction must lie in (0, 1]")
        if self.parallelism < 1:
            raise ValueError("parallelism must be at least 1")
        if self.posterior not in POSTERIORS:
            raise ValueError(f"unknown posterior {self.posterior!r}; choose from {sorted(POSTERIORS)}")
        if self.setting is Setting.OZONE and not self.ozone_csv:
            raise ValueError("the ozone setting needs ozone_csv")

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, enum.Enum):
                v = v.value
            elif f.name == "estimators":
                v = [e.value for e in v]
            elif isinstance(v, LambdaGrid):
                v = asdict(v)
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out


# --- flat key = value config files -----------------------------------------

_LIST_KEYS = {"gamma_grid", "estimators"}
_INT_KEYS = {"repetitions", "k_folds", "master_seed", "parallelism", "n_source", "n_target",
             "n_components", "per_class_draws", "lambda_steps"}
_FLOAT_KEYS = {"top_fraction", "lambda_lo", "lambda_hi", "max_failure_fraction"}


def parse_config_text(text) -> dict:
    """Parse ``key = value`` lines ('#' starts a comment) into typed overrides."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _LIST_KEYS:
            items = [v.strip() for v in value.split(",") if v.strip()]
            out[key] = [float(v) for v in items] if key == "gamma_grid" else items
        elif key in _INT_KEYS:
            out[key] = int(value)
        elif key in _FLOAT_KEYS:
            out[key] = float(value)
        elif key in {f.name for f in fields(SweepConfig)}:
            out[key] = value
        else:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
    return out


def config_from_mapping(mapping, base: SweepConfig | None = None) -> SweepConfig:
    mapping = dict(mapping)
    base = base or SweepConfig(
        setting=mapping.get("setting", Setting.SYNTHETIC2D),
        ozone_csv=mapping.get("ozone_csv"),
    )
    grid = base.grid
    lam = {k: mapping.pop(k) for k in ("lambda_lo", "lambda_hi", "lambda_steps") if k in mapping}
    if lam:
        grid = LambdaGrid(lam.get("lambda_lo", grid.lo), lam.get("lambda_hi", grid.hi),
                          lam.get("lambda_steps", grid.steps))
    return replace(base, grid=grid, **mapping)


def load_config(path, base: SweepConfig | None = None) -> SweepConfig:
    return config_from_mapping(parse_config_text(Path(path).read_text()), base)


# --- repetitions ------------------------------------------------------------


def _make_pair(cfg: SweepConfig, gamma, stream, ozone_table):
    if cfg.setting is Setting.SYNTHETIC2D:
        return synth2d_generate(gamma, cfg.n_source, cfg.n_target, stream,
                                posterior=POSTERIORS[cfg.posterior])
    if cfg.setting is Setting.EXAMPLE1D:
        return example1d_generate(gamma, cfg.n_source, cfg.n_target, stream)
    ocfg = OzoneConfig(cfg.ozone_csv, cfg.n_components, cfg.per_class_draws, gamma)
    return ozone_sample(ozone_table, ocfg, stream)


def run_repetition(cfg: SweepConfig, gamma, rep, ozone_table=None) -> CvOutcome:
    """One data set draw plus cross-validation, on stream ``(master_seed, rep)``."""
    stream = SeededStream(cfg.master_seed, rep)
    pair = _make_pair(cfg, gamma, stream.child(0), ozone_table)
    return run_iwcv(pair, cfg.grid, cfg.weight_estimator, cfg.estimators, cfg.k_folds,
                    stream.child(1))


def _job(args):
    cfg, gamma, rep, table = args
    try:
        return rep, run_repetition(cfg, gamma, rep, table), None
    except Exception as exc:  # recorded per repetition, judged by the failure cap
        return rep, None, f"{type(exc).__name__}: {exc}"


# --- rows, aggregation ------------------------------------------------------


def row_columns(estimators):
    cols = ["seed", "gamma", "repetition", "weight_variance"]
    for e in estimators:
        cols += [f"selected_lambda_{e.value}", f"final_target_risk_{e.value}"]
    if EstimatorId.CONTROLLED in estimators:
        cols.append("beta_hat")
    return cols


def outcome_row(cfg: SweepConfig, gamma, rep, outcome: CvOutcome) -> dict:
    row = {"seed": cfg.master_seed, "gamma": float(gamma), "repetition": rep,
           "weight_variance": outcome.weight_variance}
    for e in cfg.estimators:
        row[f"selected_lambda_{e.value}"] = outcome.selected_lambda[e]
        row[f"final_target_risk_{e.value}"] = outcome.final_target_risk[e]
    if EstimatorId.CONTROLLED in cfg.estimators:
        row["beta_hat"] = outcome.selected_beta_hat
    return row


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def read_rows(path):
    with open(path, newline="") as fh:
        rows = []
        for rec in csv.DictReader(fh):
            row = {}
            for k, v in rec.items():
                row[k] = int(v) if k in ("seed", "repetition") else float(v)
            rows.append(row)
    return rows


def top_subset(rows, top_fraction):
    """Rows with the largest weight variance; ties go to the lower repetition index."""
    size = math.ceil(top_fraction * len(rows) - 1e-9)
    order = sorted(rows, key=lambda r: (-r["weight_variance"], r["repetition"]))
    return order[:size]


@dataclass
class GammaSummary:
    gamma: float
    n_ok: int
    n_failed: int
    n_top: int
    means: dict  # subset -> estimator -> mean
    std_errors: dict  # subset -> estimator -> standard error
    wilcoxon: dict  # subset -> WilcoxonResult | None
    notes: dict = field(default_factory=dict)  # subset -> reason a test was not applicable


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    mean = float(math.fsum(v) / v.size)
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
    return mean, se


def summarize_gamma(gamma, rows, estimators, top_fraction, n_failed=0) -> GammaSummary:
    subsets = {"all": sorted(rows, key=lambda r: r["repetition"]),
               "top": top_subset(rows, top_fraction)}
    means, ses, tests, notes = {}, {}, {}, {}
    for name, sub in subsets.items():
        means[name], ses[name] = {}, {}
        for e in estimators:
            m, se = _mean_se([r[f"final_target_risk_{e.value}"] for r in sub])
            means[name][e.value], ses[name][e.value] = m, se
        tests[name] = None
        if EstimatorId.WEIGHTED in estimators and EstimatorId.CONTROLLED in estimators:
            a = [r["final_target_risk_weighted"] for r in sub]
            b = [r["final_target_risk_controlled"] for r in sub]
            try:
                tests[name] = wilcoxon_signed_rank(a, b)
            except ValueError as exc:
                notes[name] = f"not applicable: {exc}"
    return GammaSummary(float(gamma), len(rows), n_failed, len(subsets["top"]), means, ses,
                        tests, notes)


@dataclass
class SweepReport:
    config: SweepConfig
    summaries: list
    rows: list
    failures: list  # (gamma, repetition, message)
    paths: dict = field(default_factory=dict)

    def summary(self, gamma) -> GammaSummary:
        for s in self.summaries:
            if math.isclose(s.gamma, gamma, rel_tol=0, abs_tol=1e-12):
                return s
        raise KeyError(gamma)


def aggregate_rows(rows, estimators, top_fraction, failures=()) -> list:
    by_gamma = {}
    for r in rows:
        by_gamma.setdefault(r["gamma"], []).append(r)
    n_failed = {}
    for g, _, _ in failures:
        n_failed[g] = n_failed.get(g, 0) + 1
    return [summarize_gamma(g, by_gamma[g], estimators, top_fraction, n_failed.get(g, 0))
            for g in sorted(by_gamma)]


def aggregate_csv(summaries, estimators) -> str:
    rows = []
    for s in summaries:
        for subset in SUBSETS:
            n = s.n_ok if subset == "all" else s.n_top
            for e in estimators:
                rows.append({"gamma": s.gamma, "subset": subset, "estimator": e.value, "n": n,
                             "mean_final_target_risk": s.means[subset][e.value],
                             "std_error": s.std_errors[subset][e.value]})
    return rows_to_csv(rows, ["gamma", "subset", "estimator", "n", "mean_final_target_risk",
                              "std_error"])


def significance_csv(summaries) -> str:
    rows = []
    for s in summaries:
        for subset in SUBSETS:
            res: WilcoxonResult | None = s.wilcoxon.get(subset)
            rows.append({
                "gamma": s.gamma, "subset": subset,
                "n_pairs": s.n_ok if subset == "all" else s.n_top,
                "n_effective": res.n_effective if res else "",
                "statistic": res.statistic if res else "",
                "p_value": res.p_value if res else "",
                "method": res.method if res else "",
                "note": s.notes.get(subset, ""),
            })
    return rows_to_csv(rows, ["gamma", "subset", "n_pairs", "n_effective", "statistic",
                              "p_value", "method", "note"])


def run_sweep(cfg: SweepConfig, out_dir=None, figures=True) -> SweepReport:
    """Run every (gamma, repetition) cell, aggregate and optionally write reports.

    Failed repetitions are logged and excluded; more than
    ``cfg.max_failure_fraction`` failures at any gamma raise ``SweepError``.
    Results are collected in repetition order, so serial and parallel runs
    produce identical files.
    """
    table: OzoneTable | None = None
    if cfg.setting is Setting.OZONE:
        table = ozone_prepare(OzoneConfig(cfg.ozone_csv, cfg.n_components, cfg.per_class_draws))

    jobs = [(cfg, g, r, table) for g in cfg.gamma_grid for r in range(cfg.repetitions)]
    if cfg.parallelism > 1:
        with ProcessPoolExecutor(max_workers=cfg.parallelism) as pool:
            results = list(pool.map(_job, jobs, chunksize=max(1, len(jobs) // (8 * cfg.parallelism))))
    else:
        results = [_job(j) for j in jobs]

    rows, failures = [], []
    for (_, g, _, _), (rep, outcome, err) in zip(jobs, results):
        if err is not None:
            logger.warning("gamma=%g repetition %d failed: %s", g, rep, err)
            failures.append((g, rep, err))
        else:
            rows.append(outcome_row(cfg, g, rep, outcome))
    for g in cfg.gamma_grid:
        n_bad = sum(1 for fg, _, _ in failures if fg == g)
        if n_bad > cfg.max_failure_fraction * cfg.repetitions:
            raise SweepError(f"{n_bad} of {cfg.repetitions} repetitions failed at gamma={g}")
    if not rows:
        raise SweepError("no repetition succeeded")

    summaries = aggregate_rows(rows, cfg.estimators, cfg.top_fraction, failures)
    report = SweepReport(cfg, summaries, rows, failures)
    if out_dir is not None:
        write_sweep_outputs(report, out_dir, figures=figures)
    return report


def write_sweep_outputs(report: SweepReport, out_dir, figures=True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = report.config
    stem = cfg.setting.value
    paths = {
        "repetitions": out / f"{stem}_repetitions.csv",
        "aggregate": out / f"{stem}_aggregate.csv",
        "significance": out / f"{stem}_significance.csv",
        "manifest": out / f"{stem}_manifest.json",
    }
    paths["repetitions"].write_text(rows_to_csv(report.rows, row_columns(cfg.estimators)))
    paths["aggregate"].write_text(aggregate_csv(report.summaries, cfg.estimators))
    paths["significance"].write_text(significance_csv(report.summaries))
    manifest = {
        "config": cfg.to_dict(),
        "versions": {"iwcv": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "exclusions": {
            "total": len(report.failures),
            "by_gamma": {repr(g): sum(1 for fg, _, _ in report.failures if fg == g)
                         for g in cfg.gamma_grid},
            "messages": [{"gamma": g, "repetition": r, "error": m} for g, r, m in report.failures],
        },
    }
    paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if figures:
        from .plotting import plot_sweep

        paths["figure"] = plot_sweep(report.summaries, cfg.estimators,
                                     out / f"{stem}_mean_target_risk.png", title=stem)
    report.paths = {k: str(v) for k, v in paths.items()}
    return report.paths


# --- analytic example curves --------------------------------------------------


def example_curve_rows(gamma_grid, c_grid, theta=analytic.INV_SQRT_PI):
    """One row per gamma: weight variance (three ways), the three single-sample
    sampling variances, and P(w > c) for each c. Variance columns are NaN
    where the weight variance is infinite (gamma <= 1/sqrt(2)).
    """
    rows = []
    for g in gamma_grid:
        s = analytic.ExampleSetting(float(g), theta)
        row = {"gamma": float(g)}
        if g > analytic.CRITICAL_GAMMA:
            m = analytic.sampling_moments(s)
            row.update({
                "var_w_quadrature": m.weight_variance,
                "var_w_closed_form": analytic.weight_variance_closed_form(s),
                "var_w_alt_form": analytic.weight_variance_alt_form(s),
                "sigma2_T": m.sigma2_T, "sigma2_W": m.sigma2_W, "sigma2_beta": m.sigma2_beta,
            })
        else:
            row.update({k: float("nan") for k in ("var_w_quadrature", "var_w_closed_form",
                                                  "var_w_alt_form", "sigma2_T", "sigma2_W",
                                                  "sigma2_beta")})
        for c in c_grid:
            row[f"p_w_gt_{c:g}"] = analytic.prob_weight_exceeds(float(c), s)
        rows.append(row)
    return rows


def run_example_curves(gamma_grid, c_grid, out_path, figures=True):
    """Write the example-curve CSV (and figures next to it); returns the CSV path."""
    rows = example_curve_rows(gamma_grid, c_grid)
    cols = ["gamma", "var_w_quadrature", "var_w_closed_form", "var_w_alt_form", "sigma2_T",
            "sigma2_W", "sigma2_beta"] + [f"p_w_gt_{c:g}" for c in c_grid]
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(rows_to_csv(rows, cols))
    if figures:
        from .plotting import plot_example_curves

        plot_example_curves(rows, c_grid, out_path.parent, stem=out_path.stem)
    return out_path

"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line; ``conftest.py`` prints them in the
terminal summary. Run alone with::

    pytest tests/test_acceptance.py -v

or as a script (``python3 tests/test_acceptance.py``) for the lines only.
Criteria that are known not to hold at the stated tolerance are marked
``xfail(strict=True)``: the assertion is unchanged, and an unexpected pass
turns the run red.
"""

from __future__ import annotations

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from iwcv import analytic
from iwcv.analytic import Domain, ExampleSetting
from iwcv.cv import LambdaGrid
from iwcv.datasets import OzoneConfig, ozone_prepare, read_ozone_csv, time_local_sample
from iwcv.experiments import Setting, SweepConfig, run_sweep
from iwcv.risk import controlled_risk, controlled_risk_auto, estimate_beta, weighted_risk
from iwcv.stats_core import SeededStream, pca_project, zscore
from iwcv.weights import WeightMethod

pytestmark = pytest.mark.acceptance

FIXTURE = Path(__file__).parent / "data" / "ozone_fixture.csv"
REPORT: list[str] = []


def record(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    REPORT.append(line)
    print(line)
    return ok


# --- 1-D example identities --------------------------------------------------


def test_c01_analytic_identities():
    t0 = time.perf_counter()
    bad = []
    for g in (0.75, 0.8, 1.0, 1.5, 3.0):
        s = ExampleSetting(g)
        m = analytic.sampling_moments(s)
        if abs(analytic.source_weight_mean(s) - 1.0) > 1e-8:
            bad.append(f"E_S[w] at {g}")
        if not m.sigma2_beta <= m.sigma2_W:
            bad.append(f"sigma2_beta > sigma2_W at {g}")
        if not math.isclose(m.sigma2_beta, m.sigma2_W * (1 - m.rho**2), rel_tol=1e-6):
            bad.append(f"rho identity at {g}")
        if not math.isclose(m.sigma2_T - m.sigma2_W, analytic.variance_gap(s), rel_tol=1e-6):
            bad.append(f"variance gap at {g}")
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 10
    record(1, ok, f"identities on 5 gammas, {elapsed:.2f}s {'; '.join(bad)}")
    assert ok, bad


def test_c02_weight_variance_anchor():
    v1 = analytic.example_weight_variance(ExampleSetting(1.0))
    grid = np.linspace(0.72, 1.0, 15)
    v = [analytic.example_weight_variance(ExampleSetting(g)) for g in grid]
    increasing_as_gamma_falls = all(a > b for a, b in zip(v, v[1:]))
    ok = abs(v1 - (math.e - 1)) <= 1e-6 and increasing_as_gamma_falls
    record(2, ok, f"V[w](1) = {v1:.10f}, V[w](0.72) = {v[0]:.4g}, monotone={increasing_as_gamma_falls}")
    assert ok


@pytest.mark.xfail(strict=True, reason="P(w>10) at gamma=0.7 is about 0.008 under the source law")
def test_c03_exceedance_anchor():
    t0 = time.perf_counter()
    p = analytic.prob_weight_exceeds(10.0, ExampleSetting(0.7))
    c_grid = np.concatenate([np.linspace(0.05, 5, 50), np.geomspace(5, 500, 50)])
    monotone = True
    for g in (0.6, 0.7, 0.8):
        ps = [analytic.prob_weight_exceeds(c, ExampleSetting(g)) for c in c_grid]
        monotone &= all(b <= a for a, b in zip(ps, ps[1:]))
    elapsed = time.perf_counter() - t0
    ok = abs(p - 0.20) <= 0.03 and monotone and elapsed < 5
    record(3, ok, f"P(w>10 | 0.7) = {p:.4f} (want 0.20 +- 0.03), monotone={monotone}, {elapsed:.2f}s")
    assert ok


# --- Monte Carlo checks on the 1-D example -----------------------------------


def _draws(s, n, reps, seed):
    """Yield ``(losses, true weights)`` for ``reps`` independent source samples."""
    for r in range(reps):
        x, y = analytic.sample_example(n, Domain.SOURCE, s, SeededStream(seed, r))
        yield analytic.example_loss(x, y, s), analytic.example_weight(x, s)


def test_c04_unbiasedness():
    t0 = time.perf_counter()
    s = ExampleSetting(0.8)
    vals = np.array([controlled_risk(l, w, 0.5).value for l, w in _draws(s, 50, 10_000, 4)])
    r_true = analytic.example_risk(s)
    gap = abs(vals.mean() - r_true)
    bound = 3 * vals.std(ddof=1) / 100
    elapsed = time.perf_counter() - t0
    ok = gap <= bound and elapsed < 30
    record(4, ok, f"|mean - R_T| = {gap:.4g} <= {bound:.4g}, {elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def beta_sweep():
    s = ExampleSetting(1.0)
    b_star = analytic.beta_star(s)
    sizes = [32 * 2**i for i in range(8)]
    out = {}
    t0 = time.perf_counter()
    for n in sizes:
        err, wr, cr = [], [], []
        for l, w in _draws(s, n, 2000, 5000 + n):
            b = estimate_beta(l, w)
            err.append(abs(b - b_star))
            wr.append(weighted_risk(l, w).value)
            cr.append(controlled_risk_auto(l, w).value)
        out[n] = (np.mean(err), np.var(wr, ddof=1), np.var(cr, ddof=1))
    return out, time.perf_counter() - t0


def test_c05_beta_convergence(beta_sweep):
    out, elapsed = beta_sweep
    n = np.array(sorted(out))
    err = np.array([out[k][0] for k in n])
    slope = np.polyfit(np.log(n), np.log(err), 1)[0]
    ok = -0.65 <= slope <= -0.35 and elapsed < 120
    record(5, ok, f"log-log slope of mean |beta_hat - beta*| = {slope:.3f}, {elapsed:.1f}s")
    assert ok


def test_c06_variance_reduction(beta_sweep):
    out, _ = beta_sweep
    bad = []
    for n, (_, v_w, v_c) in sorted(out.items()):
        limit = 0.95 * v_w if n >= 256 else v_w
        if not v_c <= limit:
            bad.append(n)
    ratios = ", ".join(f"{n}:{v_c / v_w:.3f}" for n, (_, v_w, v_c) in sorted(out.items()))
    ok = not bad
    record(6, ok, f"var(controlled)/var(weighted) by n = {ratios}")
    assert ok, bad


@pytest.mark.xfail(strict=True, reason="l*w has fewer than six finite moments at gamma=0.9; "
                   "10^4 repetitions underestimate the variance by about 20% in median")
def test_c07_sampling_variance_calibration():
    s = ExampleSetting(0.9)
    vals = np.array([weighted_risk(l, w).value for l, w in _draws(s, 100, 10_000, 7)])
    expected = analytic.sigma2_W(s) / 100
    rel = abs(vals.var(ddof=1) - expected) / expected
    ok = rel <= 0.15
    record(7, ok, f"empirical {vals.var(ddof=1):.5f} vs {expected:.5f}, relative error {rel:.3f}")
    assert ok


# --- synthetic sweep -----------------------------------------------------------


@pytest.fixture(scope="module")
def synthetic_sweep():
    cfg = SweepConfig(
        setting=Setting.SYNTHETIC2D,
        gamma_grid=(0.71, 0.9, 1.1),
        repetitions=500,
        weight_estimator=WeightMethod.PARAMETRIC_GAUSSIAN,
        k_folds=5,
        grid=LambdaGrid(1e-3, 1e6, 50),
        master_seed=0,
        parallelism=max(1, min(8, os.cpu_count() or 1)),
    )
    t0 = time.perf_counter()
    report = run_sweep(cfg)
    return report, time.perf_counter() - t0


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="top-decile Wilcoxon p < 0.01 not reached with 50 pairs per gamma")
def test_c08_scaled_synthetic_reproduction(synthetic_sweep):
    report, elapsed = synthetic_sweep
    parts, ok = [], elapsed < 15 * 60
    for s in report.summaries:
        top, all_ = s.means["top"], s.means["all"]
        p = s.wilcoxon["top"].p_value if s.wilcoxon["top"] else float("nan")
        diff = abs(all_["controlled"] - all_["weighted"])
        pooled = math.hypot(s.std_errors["all"]["controlled"], s.std_errors["all"]["weighted"])
        good = top["controlled"] < top["weighted"] and p < 0.01 and diff <= 2 * pooled
        ok &= good
        parts.append(f"g={s.gamma:g}: top C={top['controlled']:.4f} W={top['weighted']:.4f} "
                     f"p={p:.3g}, all |C-W|/se={diff / pooled:.2f}")
    record(8, ok, f"{elapsed:.0f}s; " + "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_c09_oracle_dominance(synthetic_sweep):
    report, _ = synthetic_sweep
    parts, ok = [], True
    for s in report.summaries:
        m = s.means["all"]
        good = m["target"] <= m["weighted"] and m["target"] <= m["controlled"]
        ok &= good
        parts.append(f"g={s.gamma:g}: T={m['target']:.4f} W={m['weighted']:.4f} "
                     f"C={m['controlled']:.4f}")
    record(9, ok, "; ".join(parts))
    assert ok


# --- ozone pipeline ---------------------------------------------------------------


def test_c10_ozone_pipeline_fixture():
    raw_lines = FIXTURE.read_text().splitlines()
    n_missing = sum("?" in line for line in raw_lines)
    dates, X, y, dropped = read_ozone_csv(FIXTURE)
    checks = {"missing rows removed": dropped == n_missing and len(dates) == len(raw_lines) - n_missing}

    Z, _, _ = zscore(X)
    checks["z-score moments"] = (np.allclose(Z.mean(axis=0), 0, atol=1e-12)
                                 and np.allclose(Z.std(axis=0, ddof=1), 1, atol=1e-12))
    P = pca_project(Z, 10)
    cov = np.cov(P, rowvar=False)
    var = np.diag(cov)
    checks["PCA decorrelated, variance descending"] = (
        np.allclose(cov - np.diag(var), 0, atol=1e-9) and np.all(np.diff(var) <= 1e-12)
    )
    table = ozone_prepare(OzoneConfig(str(FIXTURE), n_components=10, per_class_draws=20))
    checks["prepared table shape"] = table.X.shape == (len(dates), 10) and table.n_dropped == dropped

    # smaller gamma concentrates the source on earlier rows
    centres = {}
    for g in (0.1, 0.5, 1.0):
        idx = [time_local_sample(y, 20, g, SeededStream(10, r)) for r in range(50)]
        centres[g] = float(np.mean([i.mean() for i in idx]))
        checks[f"class balance at {g}"] = all(
            np.sum(y[i] == 1) == 20 and np.sum(y[i] == -1) == 20 and np.unique(i).size == 40
            for i in idx
        )
    checks["time concentration"] = centres[0.1] < centres[0.5] < centres[1.0]

    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    centre_txt = ", ".join(f"{g}:{c:.1f}" for g, c in centres.items())
    record(10, ok, f"fixture suite, mean source row by gamma {centre_txt} {failed or ''}")
    assert ok, failed


@pytest.mark.slow
def test_c10_ozone_real_file():
    path = os.environ.get("IWCV_OZONE_CSV")
    if not path:
        REPORT.append("criterion 10: SKIP  real ozone sweep (set IWCV_OZONE_CSV to run)")
        pytest.skip("IWCV_OZONE_CSV not set")
    cfg = SweepConfig(setting=Setting.OZONE, ozone_csv=path, gamma_grid=(0.1, 0.5),
                      repetitions=200, grid=LambdaGrid(1e-3, 1e6, 50),
                      parallelism=max(1, min(8, os.cpu_count() or 1)))
    report = run_sweep(cfg)
    parts, ok = [], True
    for s in report.summaries:
        top = s.means["top"]
        p = s.wilcoxon["top"].p_value if s.wilcoxon["top"] else float("nan")
        ok &= top["controlled"] <= top["weighted"] and p < 0.05
        parts.append(f"g={s.gamma:g}: C={top['controlled']:.4f} W={top['weighted']:.4f} p={p:.3g}")
    record(10, ok, "real ozone sweep; " + "; ".join(parts))
    assert ok


# --- determinism ------------------------------------------------------------------


def test_c11_determinism(tmp_path):
    base = SweepConfig(gamma_grid=(0.71, 1.1), repetitions=24, grid=LambdaGrid(1e-3, 1e6, 12),
                       master_seed=123)
    run_sweep(base, tmp_path / "serial", figures=False)
    run_sweep(SweepConfig(**{**base.__dict__, "parallelism": 3}), tmp_path / "parallel",
              figures=False)
    names = sorted(p.name for p in (tmp_path / "serial").glob("*.csv"))
    same = bool(names) and all(
        (tmp_path / "serial" / n).read_bytes() == (tmp_path / "parallel" / n).read_bytes()
        for n in names
    )
    record(11, same, f"{len(names)} CSV files byte-identical serial vs parallel: {same}")
    assert same


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))

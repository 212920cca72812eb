"""Matplotlib figures written next to the CSV reports."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# target oracle, weighted, controlled
COLORS = {"target": "#e6ab02", "weighted": "#1f78b4", "controlled": "#33a02c"}
LABELS = {"target": r"$\hat R_T$", "weighted": r"$\hat R_{\hat w}$",
          "controlled": r"$\hat R_{\hat\beta}$"}

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def _figsize(scale=1.0):
    width = 4.5 * scale
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    return width, width * golden


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_sweep(summaries, estimators, path, title=None):
    """Mean final target risk against gamma; solid = all sets, dotted = top subset."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=_figsize())
        gammas = [s.gamma for s in summaries]
        for e in estimators:
            key = getattr(e, "value", e)
            for subset, style, suffix in (("all", "-", ""), ("top", ":", " (>)")):
                means = [s.means[subset][key] for s in summaries]
                errs = [s.std_errors[subset][key] for s in summaries]
                ax.errorbar(gammas, means, yerr=errs, color=COLORS[key], linestyle=style,
                            marker="o", markersize=3, capsize=2, label=LABELS[key] + suffix)
        ax.set_xlabel(r"$\gamma$")
        ax.set_ylabel(r"$\bar R_T$")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, ncol=2)
        return _save(fig, path)


def plot_example_curves(rows, c_grid, out_dir, stem="example_curves"):
    """Weight variance, sampling variances and exceedance probabilities."""
    out_dir = Path(out_dir)
    finite = [r for r in rows if not math.isnan(r["var_w_quadrature"])]
    paths = []
    with plt.rc_context(RC):
        if finite:
            g = [r["gamma"] for r in finite]
            fig, ax = plt.subplots(figsize=_figsize())
            ax.semilogy(g, [r["var_w_quadrature"] for r in finite], "k-", label="quadrature")
            ax.semilogy(g, [r["var_w_alt_form"] for r in finite], "k:", label="alternative form")
            ax.set_xlabel(r"$\gamma$")
            ax.set_ylabel(r"$\mathbb{V}_S[w(x)]$")
            ax.legend(frameon=False)
            paths.append(_save(fig, out_dir / f"{stem}_weight_variance.png"))

            fig, ax = plt.subplots(figsize=_figsize())
            for key, col, lab in (("sigma2_T", COLORS["target"], r"$\sigma^2_T$"),
                                  ("sigma2_W", COLORS["weighted"], r"$\sigma^2_W$"),
                                  ("sigma2_beta", COLORS["controlled"], r"$\sigma^2_\beta$")):
                ax.semilogy(g, [r[key] for r in finite], color=col, label=lab)
            ax.set_xlabel(r"$\gamma$")
            ax.set_ylabel("single-sample variance")
            ax.legend(frameon=False)
            paths.append(_save(fig, out_dir / f"{stem}_sampling_variance.png"))

        fig, ax = plt.subplots(figsize=_figsize())
        for r in rows:
            ax.plot(list(c_grid), [r[f"p_w_gt_{c:g}"] for c in c_grid],
                    label=rf"$\gamma$ = {r['gamma']:g}")
        ax.set_xlabel("c")
        ax.set_ylabel(r"$P(w(x) > c)$")
        if len(rows) <= 8:
            ax.legend(frameon=False)
        paths.append(_save(fig, out_dir / f"{stem}_exceedance.png"))
    return paths

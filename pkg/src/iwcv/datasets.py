"""Data generation and ingestion: the 2-D synthetic problem, the 1-D example
as a domain pair, and the ozone table with time-local source sampling.
"""

from __future__ import annotations

import csv
import json
import logging
from datetime import datetime
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import special

from . import analytic
from .stats_core import GaussianND, SeededStream, pca_project, zscore

logger = logging.getLogger(__name__)

MISSING_MARKER = "?"


@dataclass(frozen=True)
class LabeledSet:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise ValueError(f"{X.shape[0]} rows but {y.size} labels")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        if not np.all(np.abs(y) == 1.0):
            raise ValueError("labels must be -1 or +1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class DomainPair:
    """Labelled source data and target data whose labels are oracle-only."""

    source: LabeledSet
    target: LabeledSet
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source.dim != self.target.dim:
            raise ValueError("source and target must have the same dimension")


@dataclass(frozen=True)
class OzoneConfig:
    csv_path: str
    n_components: int = 10
    per_class_draws: int = 80
    gamma: float = 0.1

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be at least 1")
        if self.per_class_draws < 1:
            raise ValueError("per_class_draws must be at least 1")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")


# --- synthetic 2-D setting -------------------------------------------------


def bvn_cdf_posterior(X):
    """P(y = +1 | x) = Phi(-x1) * Phi(-x2), the standard bivariate normal CDF at -x."""
    return special.ndtr(-X[:, 0]) * special.ndtr(-X[:, 1])


def product_posterior(X):
    """P(y = +1 | x) = Phi(x1 * x2), a saddle-shaped boundary."""
    return special.ndtr(X[:, 0] * X[:, 1])


POSTERIORS = {"bvn_cdf": bvn_cdf_posterior, "product": product_posterior}


def synth2d_densities(gamma):
    """(p_T, p_S): N(0, I) and N([-1, 0], gamma^2 I)."""
    p_T = GaussianND(np.zeros(2), np.eye(2))
    p_S = GaussianND(np.array([-1.0, 0.0]), gamma**2 * np.eye(2))
    return p_T, p_S


def _draw_labels(prob_pos, rng):
    return np.where(rng.random(prob_pos.size) < prob_pos, 1.0, -1.0)


def synth2d_generate(gamma, n_source=50, n_target=1000, stream: SeededStream | None = None,
                     posterior: Callable = product_posterior) -> DomainPair:
    """Draw a source/target pair: N([-1, 0], gamma^2 I) versus N(0, I).

    Labels are +1 with probability ``posterior(x)`` in both domains.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if stream is None:
        raise ValueError("a SeededStream is required")
    rng = stream.rng
    p_T, p_S = synth2d_densities(gamma)
    xs = p_S.sample(n_source, rng)
    ys = _draw_labels(posterior(xs), rng)
    xt = p_T.sample(n_target, rng)
    yt = _draw_labels(posterior(xt), rng)
    meta = {"setting": "synthetic2d", "gamma": float(gamma), "seed": stream.master_seed,
            "stream_index": stream.stream_index}
    return DomainPair(LabeledSet(xs, ys), LabeledSet(xt, yt), meta)


def example1d_generate(gamma, n_source=50, n_target=1000,
                       stream: SeededStream | None = None) -> DomainPair:
    """The one-dimensional running example packaged as a domain pair."""
    if stream is None:
        raise ValueError("a SeededStream is required")
    s = analytic.ExampleSetting(gamma)
    xs, ys = analytic.sample_example(n_source, analytic.Domain.SOURCE, s, stream)
    xt, yt = analytic.sample_example(n_target, analytic.Domain.TARGET, s, stream)
    meta = {"setting": "example1d", "gamma": float(gamma), "seed": stream.master_seed,
            "stream_index": stream.stream_index}
    return DomainPair(LabeledSet(xs, ys), LabeledSet(xt, yt), meta)


def true_densities(pair: DomainPair):
    """Known (p_T, p_S) for generated settings; ozone has none."""
    setting = pair.meta.get("setting")
    gamma = pair.meta.get("gamma")
    if setting == "synthetic2d":
        return synth2d_densities(gamma)
    if setting == "example1d":
        s = analytic.ExampleSetting(gamma)
        return s.target, s.source
    raise ValueError(f"no known densities for setting {setting!r}")


def rejection_sample(density, proposal_pdf, proposal_sampler, n, stream: SeededStream,
                     bound=None, batch=None):
    """Draw ``n`` points from ``density`` using a proposal envelope.

    ``bound`` is M in ``density <= M * proposal``; when omitted it is taken as
    1.05 times the largest ratio over 10^4 proposal draws. Batches whose
    acceptance rate falls below 1e-4 signal a useless envelope and raise.
    """
    rng = stream.rng
    if bound is None:
        probe = proposal_sampler(10_000, rng)
        bound = 1.05 * float(np.max(density(probe) / proposal_pdf(probe)))
    if not bound > 0:
        raise ValueError("envelope bound must be positive")
    batch = batch or max(2 * n, 1000)
    accepted = []
    have = 0
    while have < n:
        cand = proposal_sampler(batch, rng)
        u = rng.random(len(cand))
        keep = u * bound * proposal_pdf(cand) <= density(cand)
        rate = keep.mean()
        if rate < 1e-4:
            raise ValueError(f"rejection sampler acceptance rate {rate:.2g} is below 1e-4")
        accepted.append(cand[keep])
        have += int(keep.sum())
    return np.concatenate(accepted)[:n]


def synth2d_class_conditional(gamma, label, domain, n, stream: SeededStream,
                              posterior: Callable = product_posterior):
    """Samples from p(x | y = label) in one domain by rejection from p(x).

    Accepting a draw from p(x) with probability p(y = label | x) is
    rejection sampling with envelope bound 1.
    """
    p_T, p_S = synth2d_densities(gamma)
    g = p_T if domain == "target" else p_S

    def joint(x):
        x = np.atleast_2d(x)
        p_pos = posterior(x)
        return g.pdf(x) * (p_pos if label > 0 else 1.0 - p_pos)

    return rejection_sample(joint, g.pdf, g.sample, n, stream, bound=1.0)


# --- ozone -----------------------------------------------------------------


@dataclass(frozen=True)
class OzoneTable:
    """Cleaned, standardised and projected ozone rows in time order."""

    X: np.ndarray
    y: np.ndarray
    dates: tuple
    n_dropped: int


def read_ozone_csv(path):
    """Parse rows of ``date, features..., label``; drop rows with '?'.

    Returns ``(dates, X, y, n_dropped)``. Labels 0/1 become -1/+1.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"ozone file not found: {path}")
    dates, rows, labels = [], [], []
    dropped = 0
    width = None
    with path.open(newline="") as fh:
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if not record or all(not f.strip() for f in record):
                continue
            record = [f.strip() for f in record]
            if width is None:
                width = len(record)
                if width < 3:
                    raise ValueError(f"{path}:{lineno}: expected date, features and label")
            elif len(record) != width:
                raise ValueError(f"{path}:{lineno}: expected {width} fields, got {len(record)}")
            if MISSING_MARKER in record:
                dropped += 1
                continue
            try:
                feats = [float(f) for f in record[1:-1]]
                label = float(record[-1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if label not in (0.0, 1.0):
                raise ValueError(f"{path}:{lineno}: label must be 0 or 1, got {record[-1]}")
            dates.append(record[0])
            rows.append(feats)
            labels.append(2.0 * label - 1.0)
    if not rows:
        raise ValueError(f"{path}: no complete rows")
    return tuple(dates), np.array(rows), np.array(labels), dropped


def dates_in_order(dates, fmt="%m/%d/%Y") -> bool | None:
    """True if the dates never go backwards; None if any date does not parse."""
    try:
        parsed = [datetime.strptime(d, fmt) for d in dates]
    except ValueError:
        return None
    return all(a <= b for a, b in zip(parsed, parsed[1:]))


def ozone_prepare(cfg: OzoneConfig) -> OzoneTable:
    """Clean, z-score and project the table. Row order is the time index."""
    dates, X, y, dropped = read_ozone_csv(cfg.csv_path)
    if dates_in_order(dates) is False:
        logger.warning("ozone: dates are not in chronological order; row order is used as time")
    Z, _, _ = zscore(X)
    P = pca_project(Z, cfg.n_components)
    logger.info("ozone: %d rows kept, %d dropped for missing values", len(y), dropped)
    return OzoneTable(P, y, dates, dropped)


def time_local_sample(labels, per_class, scale_fraction, stream: SeededStream):
    """Row indices drawn per class without replacement, favouring early rows.

    Row ``i`` has selection weight proportional to a normal density in ``i``
    centred at 0 with standard deviation ``scale_fraction * len(labels)``.
    Weighted sampling without replacement uses exponential keys
    (``E_i / p_i``, smallest first), evaluated in log space so rows far from
    the start keep a non-zero chance.
    """
    labels = np.asarray(labels)
    n = labels.size
    sd = scale_fraction * n
    log_p = -0.5 * (np.arange(n) / sd) ** 2
    rng = stream.rng
    chosen = []
    for cls in (-1.0, 1.0):
        idx = np.flatnonzero(labels == cls)
        if idx.size < per_class:
            raise ValueError(
                f"class {int(cls):+d} has {idx.size} rows, fewer than per_class_draws={per_class}"
            )
        keys = np.log(rng.standard_exponential(idx.size)) - log_p[idx]
        chosen.append(idx[np.argsort(keys, kind="stable")[:per_class]])
    return np.sort(np.concatenate(chosen))


def ozone_sample(table: OzoneTable, cfg: OzoneConfig, stream: SeededStream) -> DomainPair:
    src = time_local_sample(table.y, cfg.per_class_draws, cfg.gamma, stream)
    meta = {"setting": "ozone", "gamma": float(cfg.gamma), "seed": stream.master_seed,
            "stream_index": stream.stream_index, "source_indices": src.tolist()}
    return DomainPair(LabeledSet(table.X[src], table.y[src]), LabeledSet(table.X, table.y), meta)


def ozone_load(cfg: OzoneConfig, stream: SeededStream) -> DomainPair:
    """Parse, clean, z-score and project the ozone table, then draw the source.

    The target is every cleaned row, so the source rows are also part of it.
    """
    return ozone_sample(ozone_prepare(cfg), cfg, stream)


# --- serialisation ---------------------------------------------------------


def _write_set(path, labeled: LabeledSet):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(labeled.dim)] + ["y"])
        for row, label in zip(labeled.X, labeled.y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def _read_set(path) -> LabeledSet:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return LabeledSet(data[:, :-1], data[:, -1])


def read_feature_csv(path):
    """Feature matrix from a CSV with a header row; a trailing ``y`` column is ignored."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if header and header[-1].strip().lower() == "y":
        data = data[:, :-1]
    return data


def save_domain_pair(pair: DomainPair, directory, extra_meta=None):
    """Write ``source.csv``, ``target.csv`` and ``meta.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_set(directory / "source.csv", pair.source)
    _write_set(directory / "target.csv", pair.target)
    meta = dict(pair.meta)
    if extra_meta:
        meta.update(extra_meta)
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return directory


def load_domain_pair(directory) -> DomainPair:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return DomainPair(_read_set(directory / "source.csv"), _read_set(directory / "target.csv"), meta)

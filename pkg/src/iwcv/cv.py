"""k-fold importance-weighted cross-validation for the weighted ridge classifier."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import risk
from .datasets import DomainPair, true_densities
from .exceptions import DegenerateBetaError
from .model import fit_weighted_ridge, predict, quadratic_loss
from .risk import EstimatorId
from .stats_core import SeededStream
from .weights import (
    KliepConfig,
    KmmConfig,
    WeightMethod,
    WeightVector,
    kliep_weights,
    kmm_weights,
    knn_bandwidth,
    parametric_gaussian_weights,
    true_ratio_weights,
)

logger = logging.getLogger(__name__)

ALL_ESTIMATORS = (EstimatorId.TARGET, EstimatorId.WEIGHTED, EstimatorId.CONTROLLED)
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class LambdaGrid:
    lo: float = 1e-3
    hi: float = 1e6
    steps: int = 200

    def __post_init__(self):
        if not self.lo > 0:
            raise ValueError("lo must be positive")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.steps > 1 and not self.hi > self.lo:
            raise ValueError("hi must exceed lo")

    @property
    def values(self) -> np.ndarray:
        if self.steps == 1:
            return np.array([self.lo])
        return np.logspace(np.log10(self.lo), np.log10(self.hi), self.steps)


@dataclass
class CvOutcome:
    selected_lambda: dict
    final_target_risk: dict
    weight_variance: float
    beta_hats: np.ndarray  # controlled-estimator slope at every grid value
    repetition_seed: int
    gamma: float | None = None
    stream_index: int | None = None
    risk_curves: dict = field(default_factory=dict, repr=False)

    @property
    def selected_beta_hat(self) -> float | None:
        lam = self.selected_lambda.get(EstimatorId.CONTROLLED)
        if lam is None or self.beta_hats.size == 0:
            return None
        idx = int(np.argmin(np.abs(self.risk_curves["lambdas"] - lam)))
        return float(self.beta_hats[idx])


def kfold_split(n, k, stream: SeededStream):
    """Shuffled partition of ``range(n)`` into ``k`` folds; sizes differ by at most one."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    perm = stream.rng.permutation(n)
    folds = []
    for val in np.array_split(perm, k):
        val = np.sort(val)
        train = np.setdiff1d(np.arange(n), val, assume_unique=True)
        folds.append((train, val))
    return folds


def estimate_weights(pair: DomainPair, method, stream: SeededStream | None = None,
                     kmm_cfg: KmmConfig = KmmConfig(), kliep_cfg: KliepConfig = KliepConfig(),
                     knn_k: int = 5) -> WeightVector:
    method = WeightMethod(method)
    xs, xt = pair.source.X, pair.target.X
    if method is WeightMethod.TRUE_RATIO:
        p_T, p_S = true_densities(pair)
        return true_ratio_weights(xs, p_T, p_S)
    if method is WeightMethod.PARAMETRIC_GAUSSIAN:
        return parametric_gaussian_weights(xs, xt)
    bw = knn_bandwidth(xs, xt, knn_k)
    if method is WeightMethod.KMM:
        return kmm_weights(xs, xt, bw, kmm_cfg)
    return kliep_weights(xs, xt, bw, kliep_cfg, stream)


def select_lambda(lambdas, risks) -> float:
    """Smallest lambda whose risk is within a relative 1e-12 of the minimum."""
    risks = np.asarray(risks, dtype=float)
    best = np.min(risks)
    ok = risks <= best + _TIE_RTOL * abs(best)
    return float(lambdas[np.flatnonzero(ok)[0]])


def run_iwcv(pair: DomainPair, grid: LambdaGrid, weight_method=WeightMethod.PARAMETRIC_GAUSSIAN,
             estimators=ALL_ESTIMATORS, k=5, stream: SeededStream | None = None,
             weights: WeightVector | None = None, **weight_kwargs) -> CvOutcome:
    """Select lambda per risk estimator by k-fold CV and score the refit on target labels.

    Weights are estimated once on the full source set. For every lambda the
    held-out quadratic losses of all folds are pooled (in source index order)
    and each requested estimator is applied to the pooled vector. The
    ``target`` estimator instead scores each fold model on the labelled
    target set, averaged over folds.
    """
    if stream is None:
        raise ValueError("a SeededStream is required")
    estimators = tuple(EstimatorId(e) for e in estimators)
    if weights is None:
        weights = estimate_weights(pair, weight_method, stream.child(1), **weight_kwargs)
    w = np.asarray(weights, dtype=float)
    Xs, ys = pair.source.X, pair.source.y
    Xt, yt = pair.target.X, pair.target.y
    n = ys.size
    folds = kfold_split(n, k, stream.child(2))
    lambdas = grid.values

    curves = {e: np.empty(lambdas.size) for e in estimators}
    beta_hats = np.full(lambdas.size, np.nan)
    pooled = np.empty(n)
    for li, lam in enumerate(lambdas):
        target_losses = 0.0
        for train, val in folds:
            model = fit_weighted_ridge(Xs[train], ys[train], w[train], lam)
            pooled[val] = quadratic_loss(predict(model, Xs[val]), ys[val])
            if EstimatorId.TARGET in estimators:
                target_losses += risk.target_risk(quadratic_loss(predict(model, Xt), yt)).value
        if EstimatorId.TARGET in estimators:
            curves[EstimatorId.TARGET][li] = target_losses / len(folds)
        if EstimatorId.WEIGHTED in estimators:
            curves[EstimatorId.WEIGHTED][li] = risk.weighted_risk(pooled, w).value
        if EstimatorId.CONTROLLED in estimators:
            try:
                est = risk.controlled_risk_auto(pooled, w)
            except DegenerateBetaError:
                # no shift to correct: behave like the weighted estimator
                est = risk.controlled_risk(pooled, w, 0.0)
            curves[EstimatorId.CONTROLLED][li] = est.value
            beta_hats[li] = est.beta_hat

    selected = {e: select_lambda(lambdas, curves[e]) for e in estimators}
    final = {}
    for e, lam in selected.items():
        model = fit_weighted_ridge(Xs, ys, w, lam)
        final[e] = risk.target_risk(quadratic_loss(predict(model, Xt), yt)).value

    return CvOutcome(
        selected_lambda=selected,
        final_target_risk=final,
        weight_variance=risk.empirical_weight_variance(w),
        beta_hats=beta_hats,
        repetition_seed=stream.master_seed,
        gamma=pair.meta.get("gamma"),
        stream_index=stream.stream_index,
        risk_curves={"lambdas": lambdas, **curves},
    )

"""Empirical risk estimators: target, importance-weighted and controlled.

The controlled estimator subtracts ``beta * (w - 1)`` from every weighted
loss. Importance weights have expectation one under the source distribution,
so for a fixed ``beta`` the correction has mean zero and only removes the
part of the weighted loss that co-varies with the weights.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateBetaError

# Below this value of sum (w_i - 1)^2 the regression slope is refused.
BETA_DENOMINATOR_FLOOR = 1e-12


class EstimatorId(str, enum.Enum):
    TARGET = "target"
    WEIGHTED = "weighted"
    CONTROLLED = "controlled"


@dataclass(frozen=True)
class LossVector:
    losses: np.ndarray
    classifier_id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.losses, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValueError("losses must be finite")
        object.__setattr__(self, "losses", arr)

    def __array__(self, dtype=None, copy=None):
        return self.losses if dtype is None else self.losses.astype(dtype)

    def __len__(self):
        return self.losses.size


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    estimator_id: EstimatorId
    n: int
    beta_hat: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"risk estimate is not finite: {self.value}")
        if (self.beta_hat is not None) != (self.estimator_id is EstimatorId.CONTROLLED):
            raise ValueError("beta_hat is recorded for (and only for) the controlled estimator")

    def __float__(self):
        return float(self.value)


def _vectors(losses, weights):
    l = np.asarray(losses, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if l.size != w.size:
        raise ValueError(f"length mismatch: {l.size} losses vs {w.size} weights")
    if l.size == 0:
        raise ValueError("empty input")
    return l, w


def target_risk(losses) -> RiskEstimate:
    """Plain sample average of losses on labelled target data."""
    l = np.asarray(losses, dtype=float).ravel()
    if l.size == 0:
        raise ValueError("empty input")
    return RiskEstimate(float(l.mean()), EstimatorId.TARGET, l.size)


def weighted_risk(losses, weights) -> RiskEstimate:
    l, w = _vectors(losses, weights)
    return RiskEstimate(float(np.mean(l * w)), EstimatorId.WEIGHTED, l.size)


def estimate_beta(losses, weights) -> float:
    """Least-squares slope of the weighted losses on ``w - 1``.

    The numerator centres the weighted losses at their sample mean, while the
    denominator centres the weights at their known expectation of one.
    """
    l, w = _vectors(losses, weights)
    lw = l * w
    dw = w - 1.0
    denom = float(dw @ dw)
    if denom < BETA_DENOMINATOR_FLOOR:
        raise DegenerateBetaError(
            f"sum of squared weight deviations is {denom:.3g}; the control variate carries no signal"
        )
    return float((lw - lw.mean()) @ dw) / denom


def controlled_risk(losses, weights, beta) -> RiskEstimate:
    l, w = _vectors(losses, weights)
    value = float(np.mean(l * w - beta * (w - 1.0)))
    return RiskEstimate(value, EstimatorId.CONTROLLED, l.size, beta_hat=float(beta))


def controlled_risk_auto(losses, weights) -> RiskEstimate:
    return controlled_risk(losses, weights, estimate_beta(losses, weights))


def empirical_weight_variance(weights) -> float:
    w = np.asarray(weights, dtype=float).ravel()
    if w.size < 2:
        raise ValueError("need at least two weights for a sample variance")
    return float(np.var(w, ddof=1))

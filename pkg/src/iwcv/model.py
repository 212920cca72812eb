"""Importance-weighted ridge (L2-regularised least-squares) classifier."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import linalg


class LossKind(str, enum.Enum):
    QUADRATIC = "quadratic"


@dataclass(frozen=True)
class RidgeModel:
    theta: np.ndarray
    lam: float
    includes_bias: bool = False

    @property
    def dim(self) -> int:
        return self.theta.size - int(self.includes_bias)


def _design(X, includes_bias):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if includes_bias:
        X = np.hstack([X, np.ones((X.shape[0], 1))])
    return X


def fit_weighted_ridge(X, y, weights, lam, includes_bias=False) -> RidgeModel:
    """Solve ``(X^T W X + lam I) theta = X^T W y`` by Cholesky factorisation.

    Raises
    ------
    numpy.linalg.LinAlgError
        If the system matrix is not positive definite (e.g. ``lam = 0`` with
        rank-deficient weighted data).
    """
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    Xd = _design(X, includes_bias)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    if w.shape != (Xd.shape[0],) or y.shape != (Xd.shape[0],):
        raise ValueError("X, y and weights must describe the same number of samples")
    Xw = Xd * w[:, None]
    A = Xd.T @ Xw + lam * np.eye(Xd.shape[1])
    rhs = Xw.T @ y
    try:
        factor = linalg.cho_factor(A, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"weighted ridge system is singular at lambda={lam}") from exc
    theta = linalg.cho_solve(factor, rhs)
    return RidgeModel(theta=theta, lam=float(lam), includes_bias=includes_bias)


def predict(model: RidgeModel, X):
    Xd = _design(X, model.includes_bias)
    if Xd.shape[1] != model.theta.size:
        raise ValueError(
            f"model expects {model.dim} features, got {Xd.shape[1] - int(model.includes_bias)}"
        )
    return Xd @ model.theta


def quadratic_loss(prediction, label):
    """``(prediction - label)**2`` for labels in {-1, +1}."""
    label = np.asarray(label, dtype=float)
    if not np.all(np.abs(label) == 1.0):
        raise ValueError("labels must be -1 or +1")
    out = (np.asarray(prediction, dtype=float) - label) ** 2
    return float(out) if out.ndim == 0 else out

"""Importance-weight estimators.

Every estimator returns a :class:`WeightVector` of non-negative, finite
ratios ``p_T(x_i) / p_S(x_i)`` for the source samples. Source densities below
:data:`DENSITY_FLOOR` raise instead of being clipped, since clipping would
silently truncate the weights.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import ConvergenceError, DensityFloorError
from .stats_core import SeededStream, fit_gaussian

logger = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-300
_LOG_FLOOR = math.log(DENSITY_FLOOR)


class WeightMethod(str, enum.Enum):
    TRUE_RATIO = "true"
    PARAMETRIC_GAUSSIAN = "gaussian"
    KMM = "kmm"
    KLIEP = "kliep"


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    estimator_id: WeightMethod
    bandwidth: float | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        object.__setattr__(self, "weights", w)

    def __array__(self, dtype=None, copy=None):
        return self.weights if dtype is None else self.weights.astype(dtype)

    def __len__(self):
        return self.weights.size

    def __getitem__(self, idx):
        return self.weights[idx]


@dataclass(frozen=True)
class KmmConfig:
    upper_bound_B: float = 1000.0
    slack_epsilon: float | None = None  # None -> (sqrt(n) - 1) / sqrt(n)
    max_iterations: int = 20000
    tolerance: float = 1e-10

    def __post_init__(self):
        if not self.upper_bound_B > 0:
            raise ValueError("upper_bound_B must be positive")
        if self.slack_epsilon is not None and self.slack_epsilon < 0:
            raise ValueError("slack_epsilon must be non-negative")


@dataclass(frozen=True)
class KliepConfig:
    num_centers: int = 100
    learning_rate: float = 1e-4
    max_iterations: int = 10000
    tolerance: float = 1e-9

    def __post_init__(self):
        if self.num_centers < 1:
            raise ValueError("num_centers must be at least 1")


def _as_matrix(x):
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def _log_density(density, x):
    if hasattr(density, "logpdf"):
        return np.asarray(density.logpdf(x), dtype=float).ravel(), True
    return np.asarray(density(x), dtype=float).ravel(), False


def _ratio(x, p_T, p_S):
    num, num_log = _log_density(p_T, x)
    den, den_log = _log_density(p_S, x)
    with np.errstate(divide="ignore"):
        log_den = den if den_log else np.log(np.maximum(den, 0.0))
    bad = np.flatnonzero(~(log_den >= _LOG_FLOOR))
    if bad.size:
        i = int(bad[0])
        raise DensityFloorError(
            f"source density at sample {i} is below {DENSITY_FLOOR:g}; weight would be unbounded", i
        )
    with np.errstate(divide="ignore"):
        log_num = num if num_log else np.log(np.maximum(num, 0.0))
    return np.exp(log_num - log_den)


def true_ratio_weights(source_x, p_T, p_S) -> WeightVector:
    """Weights from known densities.

    ``p_T`` and ``p_S`` are either callables returning densities or objects
    with a ``logpdf`` method (preferred; the ratio is then formed in log space).
    """
    return WeightVector(_ratio(source_x, p_T, p_S), WeightMethod.TRUE_RATIO)


def parametric_gaussian_weights(source_x, target_x) -> WeightVector:
    """Ratio of normal densities fitted to each domain."""
    xs = _as_matrix(source_x)
    xt = _as_matrix(target_x)
    p_S = fit_gaussian(xs)
    p_T = fit_gaussian(xt)
    return WeightVector(_ratio(xs, p_T, p_S), WeightMethod.PARAMETRIC_GAUSSIAN)


def gaussian_kernel(a, b, bandwidth):
    """``exp(-||a - b||^2 / (2 * bandwidth^2))`` for all row pairs."""
    return np.exp(-cdist(_as_matrix(a), _as_matrix(b), "sqeuclidean") / (2.0 * bandwidth**2))


def knn_bandwidth(source_x, target_x, k=5) -> float:
    """Mean distance from each source point to its ``k`` nearest target points."""
    xs = _as_matrix(source_x)
    xt = _as_matrix(target_x)
    if not 1 <= k <= xt.shape[0]:
        raise ValueError(f"k must be in [1, {xt.shape[0]}], got {k}")
    dist = cdist(xs, xt)
    nearest = np.sort(dist, axis=1, kind="stable")[:, :k]
    bw = float(nearest.mean())
    if not bw > 0:
        raise ValueError("source and target points coincide; k-NN bandwidth is zero")
    return bw


# --- Kernel mean matching -------------------------------------------------


def _project_box_sum(v, upper, lo_sum, hi_sum):
    """Euclidean projection onto ``{0 <= w <= upper, lo_sum <= sum(w) <= hi_sum}``."""
    w = np.clip(v, 0.0, upper)
    s = w.sum()
    if lo_sum <= s <= hi_sum:
        return w
    target = hi_sum if s > hi_sum else lo_sum
    # sum(clip(v - tau)) is non-increasing in tau; bracket and bisect
    lo_tau = float(np.min(v) - upper)
    hi_tau = float(np.max(v))
    for _ in range(200):
        mid = 0.5 * (lo_tau + hi_tau)
        if np.clip(v - mid, 0.0, upper).sum() > target:
            lo_tau = mid
        else:
            hi_tau = mid
        if hi_tau - lo_tau <= 1e-15 * max(1.0, abs(mid)):
            break
    w = np.clip(v - hi_tau, 0.0, upper)
    # distribute the remaining (round-off sized) gap over the free coordinates
    free = (w > 0) & (w < upper)
    if free.any():
        w[free] += (target - w.sum()) / free.sum()
        np.clip(w, 0.0, upper, out=w)
    return w


def kmm_objective(w, K, kappa):
    return 0.5 * float(w @ K @ w) - float(kappa @ w)


def kmm_weights(source_x, target_x, bandwidth, cfg: KmmConfig = KmmConfig()) -> WeightVector:
    """Kernel mean matching by accelerated projected gradient.

    Minimises ``0.5 w^T K w - kappa^T w`` over ``0 <= w <= B`` and
    ``|sum(w) - n| <= n * eps``, starting from uniform weights.
    """
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    xs = _as_matrix(source_x)
    xt = _as_matrix(target_x)
    n, m = xs.shape[0], xt.shape[0]
    if n < 1 or m < 1:
        raise ValueError("need at least one source and one target sample")
    eps = cfg.slack_epsilon
    if eps is None:
        eps = (math.sqrt(n) - 1.0) / math.sqrt(n)
    lo_sum, hi_sum = n * (1.0 - eps), n * (1.0 + eps)
    B = cfg.upper_bound_B

    K = gaussian_kernel(xs, xs, bandwidth)
    kappa = (n / m) * gaussian_kernel(xs, xt, bandwidth).sum(axis=1)
    lipschitz = float(np.linalg.eigvalsh(K)[-1])
    step = 1.0 / lipschitz

    w = _project_box_sum(np.ones(n), B, lo_sum, hi_sum)
    f = kmm_objective(w, K, kappa)
    best_w, best_f = w, f
    y = w.copy()
    t = 1.0
    window = 20
    history = [f]
    for it in range(cfg.max_iterations):
        w_new = _project_box_sum(y - step * (K @ y - kappa), B, lo_sum, hi_sum)
        f_new = kmm_objective(w_new, K, kappa)
        if f_new > f:
            # adaptive restart: drop momentum
            t = 1.0
            y = w.copy()
            w_new = _project_box_sum(w - step * (K @ w - kappa), B, lo_sum, hi_sum)
            f_new = kmm_objective(w_new, K, kappa)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = w_new + ((t - 1.0) / t_new) * (w_new - w)
        w, f, t = w_new, f_new, t_new
        if f < best_f:
            best_w, best_f = w, f
        history.append(best_f)
        if len(history) > window:
            gain = history[-window - 1] - history[-1]
            if gain <= cfg.tolerance * (1.0 + abs(best_f)):
                logger.debug("KMM converged after %d iterations", it + 1)
                return WeightVector(best_w, WeightMethod.KMM, bandwidth=float(bandwidth))
    gain = history[-window - 1] - history[-1] if len(history) > window else float("inf")
    raise ConvergenceError(
        f"KMM did not converge in {cfg.max_iterations} iterations (last gain {gain:.3g})", gap=gain
    )


# --- KLIEP ----------------------------------------------------------------


def _kliep_step(alpha, A, b, lr):
    alpha = alpha + lr * A.T @ (1.0 / np.maximum(A @ alpha, np.finfo(float).tiny))
    alpha = alpha + b * (1.0 - b @ alpha) / (b @ b)
    alpha = np.maximum(alpha, 0.0)
    norm = b @ alpha
    if not norm > 0:
        return None
    return alpha / norm


def kliep_objective(alpha, A):
    return float(np.mean(np.log(np.maximum(A @ alpha, np.finfo(float).tiny))))


def kliep_weights(source_x, target_x, bandwidth, cfg: KliepConfig = KliepConfig(),
                  stream: SeededStream | None = None, *, return_trace=False):
    """KLIEP: kernel-mixture density ratio fitted by projected ascent.

    Centres are target points (a seeded subsample when there are more than
    ``cfg.num_centers``). A candidate step is accepted only if it does not
    lower the target log-likelihood; otherwise the learning rate is halved.
    The returned weights average exactly one over the source sample.
    """
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    xs = _as_matrix(source_x)
    xt = _as_matrix(target_x)
    m = xt.shape[0]
    n_centers = min(cfg.num_centers, m)
    if n_centers < m:
        if stream is None:
            raise ValueError("a SeededStream is needed to subsample KLIEP centres")
        idx = np.sort(stream.rng.choice(m, size=n_centers, replace=False))
        centers = xt[idx]
    else:
        centers = xt

    A = gaussian_kernel(xt, centers, bandwidth)
    b = gaussian_kernel(xs, centers, bandwidth).mean(axis=0)
    if not np.any(b > 0):
        raise ValueError("source points are out of range of every KLIEP centre")

    alpha = np.ones(n_centers)
    alpha /= b @ alpha
    obj = kliep_objective(alpha, A)
    trace = [obj]
    lr = cfg.learning_rate
    converged = False
    for _ in range(cfg.max_iterations):
        cand = _kliep_step(alpha, A, b, lr)
        if cand is None:
            lr *= 0.5
        else:
            cand_obj = kliep_objective(cand, A)
            if cand_obj >= obj:
                gain = cand_obj - obj
                alpha, obj = cand, cand_obj
                trace.append(obj)
                if gain <= cfg.tolerance * (1.0 + abs(obj)):
                    converged = True
                    break
                lr *= 1.1
            else:
                lr *= 0.5
        if lr < 1e-14:
            # no ascent direction survives the projection: stationary point
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            f"KLIEP did not converge in {cfg.max_iterations} iterations",
            gap=trace[-1] - trace[-2] if len(trace) > 1 else None,
        )
    if not np.any(alpha > 0):
        raise ValueError("KLIEP returned all-zero mixture coefficients")
    w = gaussian_kernel(xs, centers, bandwidth) @ alpha
    w = w / w.mean()
    result = WeightVector(w, WeightMethod.KLIEP, bandwidth=float(bandwidth))
    return (result, np.asarray(trace)) if return_trace else result

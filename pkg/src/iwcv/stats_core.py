"""Numerical building blocks: normal densities, fitting, quadrature, PCA,
seeded random streams and the Wilcoxon signed-rank test.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .exceptions import ConvergenceError, DivergenceError, SingularCovarianceError

__all__ = [
    "Gaussian1D",
    "GaussianND",
    "SeededStream",
    "WilcoxonResult",
    "normal_pdf",
    "normal_cdf",
    "fit_gaussian",
    "quadrature",
    "quadrature_real_line",
    "zscore",
    "pca_project",
    "signed_rank_distribution",
    "wilcoxon_signed_rank",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Gaussian1D:
    """Univariate normal distribution parameterised by its standard deviation."""

    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError(f"std must be positive, got {self.std}")

    def pdf(self, x):
        return normal_pdf(x, self)

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.std
        return -0.5 * z * z - math.log(self.std) - 0.5 * _LOG_2PI


@dataclass(frozen=True)
class GaussianND:
    """Multivariate normal distribution with a dense covariance matrix."""

    mean: np.ndarray
    covariance: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of length {mean.size}")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        eig = np.linalg.eigvalsh(cov)
        if eig[0] <= 0:
            raise SingularCovarianceError(
                f"covariance is not positive definite (smallest eigenvalue {eig[0]:.3g})", float(eig[0])
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", np.linalg.cholesky(cov))

    @property
    def dim(self) -> int:
        return self.mean.size

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1 and self.dim > 1:
            x = x[None, :]
        x = x.reshape(-1, self.dim)
        # solve L z = (x - mu)^T for each row
        z = np.linalg.solve(self._chol, (x - self.mean).T)
        maha = np.sum(z * z, axis=0)
        log_det = 2.0 * np.sum(np.log(np.diag(self._chol)))
        return -0.5 * (maha + log_det + self.dim * _LOG_2PI)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self._chol.T


class SeededStream:
    """Reproducible random stream identified by ``(master_seed, stream_index)``.

    The generator is created lazily and then advanced by every draw, so one
    stream should be owned by one unit of work.
    """

    def __init__(self, master_seed: int, stream_index: int = 0, _spawn_tail: tuple = ()):
        if stream_index < 0:
            raise ValueError("stream_index must be non-negative")
        self.master_seed = int(master_seed)
        self.stream_index = int(stream_index)
        self._spawn_tail = tuple(int(t) for t in _spawn_tail)
        self._rng = None

    def __repr__(self):
        tail = f", tail={self._spawn_tail}" if self._spawn_tail else ""
        return f"SeededStream({self.master_seed}, {self.stream_index}{tail})"

    @property
    def rng(self) -> np.random.Generator:
        if self._rng is None:
            seq = np.random.SeedSequence(
                self.master_seed, spawn_key=(self.stream_index, *self._spawn_tail)
            )
            self._rng = np.random.Generator(np.random.PCG64(seq))
        return self._rng

    def child(self, label: int) -> "SeededStream":
        """Independent sub-stream, deterministic in ``label``."""
        return SeededStream(self.master_seed, self.stream_index, (*self._spawn_tail, label))


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n_effective: int
    method: str = "exact"


def normal_pdf(x, g: Gaussian1D = Gaussian1D()):
    z = (np.asarray(x, dtype=float) - g.mean) / g.std
    out = np.exp(-0.5 * z * z) / (g.std * math.sqrt(2.0 * math.pi))
    return float(out) if out.ndim == 0 else out


def normal_cdf(x):
    """Standard normal CDF."""
    out = special.ndtr(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def fit_gaussian(samples) -> GaussianND:
    """Fit a normal distribution by sample mean and (n-1) sample covariance.

    Raises
    ------
    SingularCovarianceError
        If the sample covariance has a non-positive (or numerically zero)
        eigenvalue; the offending eigenvalue is attached to the exception.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if n < d + 1:
        raise ValueError(f"need at least {d + 1} samples to fit a {d}-dimensional normal, got {n}")
    mean = X.mean(axis=0)
    cov = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    cov = 0.5 * (cov + cov.T)
    eig = np.linalg.eigvalsh(cov)
    scale = max(1.0, float(np.max(np.abs(np.diag(cov)))))
    if eig[0] <= 1e-12 * scale:
        raise SingularCovarianceError(
            f"sample covariance is singular (smallest eigenvalue {eig[0]:.3g})", float(eig[0])
        )
    return GaussianND(mean, cov)


# Gauss-Kronrod 7/15 abscissae and weights on [-1, 1] (non-negative half).
_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KW = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GW = np.zeros(15)
_GW[[1, 3, 5]] = _WG[:3]
_GW[7] = _WG[3]
_GW[[9, 11, 13]] = _WG[2::-1]


def _gk15(f, a, b):
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    x = mid + half * _NODES
    fx = np.broadcast_to(np.asarray(f(x), dtype=float), x.shape)
    if not np.all(np.isfinite(fx)):
        raise DivergenceError(f"integrand is not finite on [{a:.6g}, {b:.6g}]")
    kron = half * float(_KW @ fx)
    gauss = half * float(_GW @ fx)
    return kron, abs(kron - gauss)


def quadrature(f, lo, hi, tol=1e-10, *, rel_tol=0.0, max_intervals=4000, panels=1):
    """Globally adaptive Gauss-Kronrod (7/15) integration of ``f`` over ``[lo, hi]``.

    ``f`` is called with a 1-D array of abscissae and must return values of
    the same shape (a scalar is broadcast). The interval with the largest
    error estimate is bisected until the summed estimate is below
    ``max(tol, rel_tol * |result|)``.

    Raises
    ------
    ConvergenceError
        If ``max_intervals`` subintervals are used without meeting the target.
    """
    if tol <= 0 and rel_tol <= 0:
        raise ValueError("a positive tolerance is required")
    lo, hi = float(lo), float(hi)
    if lo == hi:
        return 0.0
    sign = 1.0
    if hi < lo:
        lo, hi, sign = hi, lo, -1.0

    edges = np.linspace(lo, hi, panels + 1)
    heap = []
    total = 0.0
    total_err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, err = _gk15(f, a, b)
        heapq.heappush(heap, (-err, a, b, val))
        total += val
        total_err += err

    while total_err > max(tol, rel_tol * abs(total)):
        if len(heap) >= max_intervals:
            raise ConvergenceError(
                f"quadrature did not converge on [{lo}, {hi}] (error estimate {total_err:.3g})",
                gap=total_err,
            )
        neg_err, a, b, val = heapq.heappop(heap)
        m = 0.5 * (a + b)
        v1, e1 = _gk15(f, a, m)
        v2, e2 = _gk15(f, m, b)
        heapq.heappush(heap, (-e1, a, m, v1))
        heapq.heappush(heap, (-e2, m, b, v2))
        total += v1 + v2 - val
        total_err += e1 + e2 + neg_err
    # re-sum to shed accumulated update round-off
    total = math.fsum(item[3] for item in heap)
    return sign * total


def quadrature_real_line(f, center=0.0, scale=1.0, tol=1e-12, *, rel_tol=1e-13,
                         width=10.0, max_doublings=10):
    """Integrate ``f`` over the real line by truncation with tail doubling.

    Starts from ``center +/- width * scale`` and keeps adding tail pieces
    ``[L, 2L]`` on both sides until a pair of pieces contributes less than the
    tolerance. An integral whose tails never settle raises ``DivergenceError``.
    """
    half = width * scale
    core = quadrature(f, center - half, center + half, tol, rel_tol=rel_tol, panels=8)
    total = core
    inner = half
    for _ in range(max_doublings):
        outer = 2.0 * inner
        left = quadrature(f, center - outer, center - inner, tol, rel_tol=rel_tol, panels=8)
        right = quadrature(f, center + inner, center + outer, tol, rel_tol=rel_tol, panels=8)
        total += left + right
        if abs(left) + abs(right) <= max(tol, rel_tol * abs(total)):
            return total
        inner = outer
    raise DivergenceError(
        f"integral does not settle out to +/-{inner:.3g} around {center}", gap=abs(left) + abs(right)
    )


def zscore(data):
    """Standardise columns to zero mean and unit (n-1) standard deviation.

    Returns the standardised matrix together with the column means and
    standard deviations used.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    mean = X.mean(axis=0)
    std = X.std(axis=0, ddof=1)
    bad = np.flatnonzero(~(std > 1e-12 * np.maximum(1.0, np.abs(mean))))
    if bad.size:
        raise ValueError(f"column {int(bad[0])} has zero variance")
    return (X - mean) / std, mean, std


def pca_project(data, k):
    """Project onto the leading ``k`` principal components.

    Components come from an eigendecomposition of the sample covariance,
    ordered by decreasing eigenvalue; each component's largest-magnitude
    loading is made positive.
    """
    X = np.asarray(data, dtype=float)
    n, d = X.shape
    if k < 1 or k > min(n, d):
        raise ValueError(f"k must be in [1, {min(n, d)}], got {k}")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (n - 1)
    evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
    order = np.argsort(evals, kind="stable")[::-1][:k]
    V = evecs[:, order]
    lead = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[lead, np.arange(k)])
    return Xc @ V


def _midranks(values):
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=float)
    sorted_vals = values[order]
    i = 0
    n = len(values)
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def signed_rank_distribution(ranks):
    """Exact null distribution of the positive-rank sum for the given ranks.

    Enumerates all ``2**n`` sign assignments by dynamic programming on
    doubled ranks (so mid-ranks stay integral). Returns ``(support, probs)``
    with the support expressed in the original rank units.
    """
    doubled = np.rint(2.0 * np.asarray(ranks, dtype=float)).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    support = np.arange(total + 1)
    mask = counts > 0
    probs = counts[mask] / 2.0 ** len(doubled)
    return support[mask] / 2.0, probs


def wilcoxon_signed_rank(a, b, exact_max=25) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test for paired samples.

    Zero differences are dropped and ties get mid-ranks. The statistic is
    ``min(W+, W-)``. Up to ``exact_max`` non-zero differences the p-value
    comes from the exact permutation distribution; beyond that a normal
    approximation with the tie-corrected variance is used.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("a and b must be 1-D arrays of equal length")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise ValueError("all paired differences are zero")
    if n < 5:
        raise ValueError(f"need at least 5 non-zero differences, got {n}")
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    stat = min(w_plus, w_minus)

    if n <= exact_max:
        support, probs = signed_rank_distribution(ranks)
        p = 2.0 * float(probs[support <= stat + 1e-9].sum())
        return WilcoxonResult(stat, min(1.0, p), n, "exact")

    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    z = (stat - mean) / math.sqrt(var)
    p = 2.0 * float(special.ndtr(z))
    return WilcoxonResult(stat, min(1.0, max(0.0, p)), n, "normal")

"""Quadrature ground truth for the one-dimensional biased-sampling example.

Target inputs are N(0, 1), source inputs are N(-1, gamma) with ``gamma`` a
standard deviation, both domains share the posterior p(y | x) = Phi(y x),
and a linear predictor ``theta * x`` is scored with the quadratic loss.
All moments below are computed by adaptive quadrature over the real line;
closed forms are only used as cross-checks.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .stats_core import Gaussian1D, SeededStream, normal_pdf, quadrature_real_line

INV_SQRT_PI = 1.0 / math.sqrt(math.pi)
CRITICAL_GAMMA = 1.0 / math.sqrt(2.0)

_ABS_TOL = 1e-14
_REL_TOL = 1e-13


class Domain(str, enum.Enum):
    SOURCE = "source"
    TARGET = "target"


@dataclass(frozen=True)
class ExampleSetting:
    gamma: float
    theta: float = INV_SQRT_PI

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def source(self) -> Gaussian1D:
        return Gaussian1D(-1.0, self.gamma)

    @property
    def target(self) -> Gaussian1D:
        return Gaussian1D(0.0, 1.0)


def log_example_weight(x, s: ExampleSetting):
    x = np.asarray(x, dtype=float)
    g = s.gamma
    return math.log(g) + 0.5 * ((x + 1.0) ** 2 / g**2 - x**2)


def example_weight(x, s: ExampleSetting):
    """Closed-form weight ``gamma * exp(((x + 1)^2 / gamma^2 - x^2) / 2)``."""
    out = np.exp(log_example_weight(x, s))
    return float(out) if out.ndim == 0 else out


def example_loss(x, y, s: ExampleSetting):
    return (np.asarray(x, dtype=float) * s.theta - y) ** 2


def _expect(terms, domain: Domain, s: ExampleSetting):
    """E[sum_k c_k(x, y) w(x)^k] under the domain's joint distribution.

    ``terms(x, y)`` returns ``{k: c_k}``. Each density-times-weight-power
    factor is formed in log space so that far tails neither overflow nor
    produce 0 * inf.
    """
    g = s.source if domain is Domain.SOURCE else s.target

    def integrand(x):
        log_p = g.logpdf(x)
        log_w = log_example_weight(x, s)
        total = np.zeros_like(x)
        for y, py in ((1.0, special.ndtr(x)), (-1.0, special.ndtr(-x))):
            for k, coef in terms(x, y).items():
                total = total + py * coef * np.exp(log_p + k * log_w)
        return total

    return quadrature_real_line(integrand, g.mean, g.std, _ABS_TOL, rel_tol=_REL_TOL)


def source_weight_mean(s: ExampleSetting) -> float:
    """E_S[w] by quadrature; equals one whenever the integral exists."""
    return _expect(lambda x, y: {1: 1.0}, Domain.SOURCE, s)


def example_weight_variance(s: ExampleSetting) -> float:
    """V_S[w] = E_S[w^2] - 1 by quadrature. Infinite for gamma <= 1/sqrt(2)."""
    if s.gamma <= CRITICAL_GAMMA:
        raise ValueError(f"weight variance diverges for gamma <= 1/sqrt(2), got {s.gamma}")
    return _expect(lambda x, y: {2: 1.0}, Domain.SOURCE, s) - 1.0


def weight_variance_closed_form(s: ExampleSetting) -> float:
    """gamma^2 / sqrt(2 gamma^2 - 1) * exp(1 / (2 gamma^2 - 1)) - 1."""
    g2 = s.gamma**2
    if 2.0 * g2 - 1.0 <= 0:
        raise ValueError("weight variance diverges for gamma <= 1/sqrt(2)")
    return g2 / math.sqrt(2.0 * g2 - 1.0) * math.exp(1.0 / (2.0 * g2 - 1.0)) - 1.0


def weight_variance_alt_form(s: ExampleSetting) -> float:
    """gamma^2 / (2 gamma^2 - 1) * exp(1 / (2 gamma^2 - 1)) - 1.

    Kept for comparison only: it matches the quadrature value at gamma = 1
    and nowhere else.
    """
    g2 = s.gamma**2
    if 2.0 * g2 - 1.0 <= 0:
        raise ValueError("weight variance diverges for gamma <= 1/sqrt(2)")
    return g2 / (2.0 * g2 - 1.0) * math.exp(1.0 / (2.0 * g2 - 1.0)) - 1.0


def example_risk(s: ExampleSetting) -> float:
    """Target risk R_T(theta) by quadrature."""
    return _expect(lambda x, y: {0: example_loss(x, y, s)}, Domain.TARGET, s)


def example_risk_closed_form(s: ExampleSetting) -> float:
    """theta^2 - 2 theta / sqrt(pi) + 1, from E[x Phi(x)] = 1 / (2 sqrt(pi))."""
    return s.theta**2 - 2.0 * s.theta * INV_SQRT_PI + 1.0


@dataclass(frozen=True)
class SamplingMoments:
    """Single-sample moments of the three risk estimators."""

    gamma: float
    risk: float
    weight_variance: float
    sigma2_T: float
    sigma2_W: float
    covariance: float  # C_S[l * w, w]

    @property
    def beta_star(self) -> float:
        return self.covariance / self.weight_variance

    @property
    def rho(self) -> float:
        return self.covariance / math.sqrt(self.sigma2_W * self.weight_variance)

    @property
    def sigma2_beta(self) -> float:
        return self.sigma2_W - self.covariance**2 / self.weight_variance


def sigma2_T(s: ExampleSetting) -> float:
    r = example_risk(s)
    return _expect(lambda x, y: {0: (example_loss(x, y, s) - r) ** 2}, Domain.TARGET, s)


def sigma2_W(s: ExampleSetting) -> float:
    """E_S[(l w - R)^2], expanded in powers of w."""
    r = example_risk(s)

    def terms(x, y):
        l = example_loss(x, y, s)
        return {2: l * l, 1: -2.0 * r * l, 0: r * r}

    return _expect(terms, Domain.SOURCE, s)


def weighted_loss_covariance(s: ExampleSetting) -> float:
    """C_S[l w, w] = E_S[(l w - R)(w - 1)]."""
    r = example_risk(s)

    def terms(x, y):
        l = example_loss(x, y, s)
        return {2: l, 1: -l - r, 0: r}

    return _expect(terms, Domain.SOURCE, s)


def sampling_moments(s: ExampleSetting) -> SamplingMoments:
    return SamplingMoments(
        gamma=s.gamma,
        risk=example_risk(s),
        weight_variance=example_weight_variance(s),
        sigma2_T=sigma2_T(s),
        sigma2_W=sigma2_W(s),
        covariance=weighted_loss_covariance(s),
    )


def sigma2_beta(s: ExampleSetting) -> float:
    return sampling_moments(s).sigma2_beta


def beta_star(s: ExampleSetting) -> float:
    """Variance-optimal control-variate coefficient C_S[l w, w] / V_S[w]."""
    return weighted_loss_covariance(s) / example_weight_variance(s)


def variance_gap(s: ExampleSetting) -> float:
    """E_T[l^2 (1 - w)]: the amount by which sigma2_T exceeds sigma2_W."""

    def terms(x, y):
        l2 = example_loss(x, y, s) ** 2
        return {0: l2, 1: -l2}

    return _expect(terms, Domain.TARGET, s)


def prob_weight_exceeds(c, s: ExampleSetting) -> float:
    """P(w(x) > c) for x drawn from the source distribution.

    ``w(x) > c`` reduces to the quadratic inequality
    ``(1/g^2 - 1) x^2 + (2/g^2) x + 1/g^2 - 2 log(c/g) > 0``; the answer is
    the source probability mass of its solution set.
    """
    if not c > 0:
        raise ValueError(f"c must be positive, got {c}")
    g = s.gamma
    a = 1.0 / g**2 - 1.0
    b = 2.0 / g**2
    k = 1.0 / g**2 - 2.0 * math.log(c / g)

    def below(x):  # P_S(X < x)
        return float(special.ndtr((x + 1.0) / g))

    def above(x):
        return float(special.ndtr(-(x + 1.0) / g))

    if a == 0.0:
        return above(-k / b)
    disc = b * b - 4.0 * a * k
    if disc <= 0.0:
        return 1.0 if a > 0 else 0.0
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    r1, r2 = sorted((q / a, k / q))
    if a > 0:
        return below(r1) + above(r2)
    return max(0.0, below(r2) - below(r1))


def sample_example(n: int, domain: Domain, s: ExampleSetting, stream: SeededStream):
    """Draw ``n`` labelled points; y = +1 with probability Phi(x)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    g = s.source if Domain(domain) is Domain.SOURCE else s.target
    rng = stream.rng
    x = g.mean + g.std * rng.standard_normal(n)
    u = rng.random(n)
    y = np.where(u < special.ndtr(x), 1.0, -1.0)
    return x, y


def source_pdf(x, s: ExampleSetting):
    return normal_pdf(x, s.source)


def target_pdf(x, s: ExampleSetting):
    return normal_pdf(x, s.target)

"""
Gaussian models, their discretization, and Jensen-Shannon leakage ranking.

All divergences use base-2 logarithms so JS lies in [0, 1].
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, xlogy
from scipy.stats import norm

from src.errors import ArgumentError, DegenerateModelError, DivergenceError
from src.logger import setup_logger

log = setup_logger(__name__)

MIDPOINT = "midpoint"
CDF = "cdf"
NORMALIZATION_TOLERANCE = 1e-12
LN2 = math.log(2.0)


@dataclass(frozen=True)
class GaussianModel:
    mu: float
    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ArgumentError(f"variance must be positive, got {self.sigma2}")

    @property
    def sigma(self):
        return math.sqrt(self.sigma2)


@dataclass(frozen=True, eq=False)
class DiscretePmf:
    support_min: int
    support_max: int
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or len(probs) != self.support_max - self.support_min + 1:
            raise ArgumentError("pmf length must match its support")
        if (probs < 0).any():
            raise ArgumentError("pmf has negative entries")
        if abs(probs.sum() - 1.0) > NORMALIZATION_TOLERANCE:
            raise ArgumentError(f"pmf sums to {probs.sum()!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def support(self):
        return np.arange(self.support_min, self.support_max + 1)


@dataclass(frozen=True)
class LeakageRanking:
    distances: tuple
    order: tuple


def fit_gaussian(est):
    """N(mu_hat, sigma2_hat) straight from a moment estimate."""
    return GaussianModel(est.mu_hat, est.sigma2_hat)


def gaussian_pdf(model, x):
    return norm.pdf(x, loc=model.mu, scale=model.sigma)


def _normalized(weights):
    total = weights.sum()
    probs = weights / total
    # One renormalization pass absorbs the rounding left by the division
    return probs / probs.sum()


def _log_bin_mass(model, lo, hi):
    """log(Phi(hi) - Phi(lo)) per bin, taken from the tail each bin sits in."""
    loc, scale = model.mu, model.sigma
    with np.errstate(divide="ignore", invalid="ignore"):
        upper = norm.logsf(lo, loc, scale)
        upper = upper + np.log1p(-np.exp(np.minimum(norm.logsf(hi, loc, scale) - upper, 0.0)))
        lower = norm.logcdf(hi, loc, scale)
        lower = lower + np.log1p(-np.exp(np.minimum(norm.logcdf(lo, loc, scale) - lower, 0.0)))
        middle = np.log(norm.cdf(hi, loc, scale) - norm.cdf(lo, loc, scale))
    return np.where(lo >= loc, upper, np.where(hi <= loc, lower, middle))


def discretize_gaussian(model, m, M, method=MIDPOINT):
    """
    Turns a Gaussian into a pmf on the integers m..M.

    Weights are built and normalized in log space, so a model whose mass lies
    far outside the support collapses onto the nearest support end.

    Args:
        model: GaussianModel
        m, M: Integer support bounds (m < M).
        method: "midpoint" evaluates the density at k - 1/2 (centered Riemann
            sum); "cdf" integrates the same unit bins [k - 1, k] exactly.

    Returns:
        DiscretePmf normalized to 1.
    """
    if not m < M:
        raise ArgumentError(f"support needs m < M, got [{m}, {M}]")
    k = np.arange(m, M + 1, dtype=float)
    if method == MIDPOINT:
        log_weights = norm.logpdf(k - 0.5, loc=model.mu, scale=model.sigma)
    elif method == CDF:
        log_weights = _log_bin_mass(model, k - 1.0, k)
    else:
        raise ArgumentError(f"unknown discretization method '{method}'")
    log_total = logsumexp(log_weights)
    if not np.isfinite(log_total) or np.isnan(log_weights).any():
        raise DegenerateModelError(
            f"N({model.mu:.4g}, {model.sigma2:.4g}) has no representable mass on [{m}, {M}]"
        )
    if not m - 1 <= model.mu <= M:
        log.debug(f"N({model.mu:.4g}, {model.sigma2:.3g}) is centred outside [{m}, {M}]; mass piles up at the nearest end.")
    return DiscretePmf(m, M, _normalized(np.exp(log_weights - log_total)))


def uniform_pmf(m, M):
    if not m < M:
        raise ArgumentError(f"support needs m < M, got [{m}, {M}]")
    n = M - m + 1
    return DiscretePmf(m, M, np.full(n, 1.0 / n))


def shannon_entropy(p):
    """Entropy in bits with 0 log 0 = 0."""
    return float(-xlogy(p.probs, p.probs).sum() / LN2)


def kl_divergence(p, q):
    """KL(p || q) in bits; infinite divergences raise DivergenceError."""
    _same_support(p, q)
    if ((p.probs > 0) & (q.probs <= 0)).any():
        raise DivergenceError("q has zero mass where p is positive")
    mask = p.probs > 0
    return float((p.probs[mask] * np.log2(p.probs[mask] / q.probs[mask])).sum())


def _same_support(p, q):
    if (p.support_min, p.support_max) != (q.support_min, q.support_max):
        raise ArgumentError(
            f"support mismatch: [{p.support_min}, {p.support_max}] vs [{q.support_min}, {q.support_max}]"
        )


def _mixture(u, q):
    m = 0.5 * u.probs + 0.5 * q.probs
    return DiscretePmf(u.support_min, u.support_max, m / m.sum())


def js_divergence(u, q):
    """JS(u, q) = KL(u, m)/2 + KL(q, m)/2 with m the equal mixture, in [0, 1]."""
    _same_support(u, q)
    m = _mixture(u, q)
    value = 0.5 * kl_divergence(u, m) + 0.5 * kl_divergence(q, m)
    return min(1.0, max(0.0, value))


def js_divergence_entropy_form(u, q):
    """Same quantity as H((u+q)/2) - H(u)/2 - H(q)/2."""
    _same_support(u, q)
    value = shannon_entropy(_mixture(u, q)) - 0.5 * shannon_entropy(u) - 0.5 * shannon_entropy(q)
    return min(1.0, max(0.0, value))


def rank_attributes(distances, ids=None):
    """
    Orders attributes by increasing leakage; ties keep ascending id order.

    Args:
        distances: d_j per attribute.
        ids: Attribute ids aligned with distances (default 1..K).

    Returns:
        LeakageRanking
    """
    distances = tuple(float(d) for d in distances)
    if ids is None:
        ids = tuple(range(1, len(distances) + 1))
    if len(ids) != len(distances):
        raise ArgumentError("ids and distances differ in length")
    for d in distances:
        if math.isnan(d) or not 0.0 <= d <= 1.0:
            raise ArgumentError(f"distance {d} is not a finite value in [0, 1]")
    order = tuple(i for _, i in sorted(zip(distances, ids)))
    return LeakageRanking(distances, order)


def empirical_pmf(values, m, M):
    """Normalized unit-bin histogram of integer values on [m, M]."""
    values = np.asarray(values, dtype=np.int64)
    if values.size == 0:
        raise ArgumentError("empirical pmf needs at least one value")
    if values.min() < m or values.max() > M:
        raise ArgumentError(f"values fall outside [{m}, {M}]")
    counts = np.bincount(values - m, minlength=M - m + 1).astype(float)
    return DiscretePmf(m, M, _normalized(counts))


def leakage(model, m, M, method=MIDPOINT):
    """d_j = JS(discretized model, uniform on [m, M])."""
    return js_divergence(discretize_gaussian(model, m, M, method), uniform_pmf(m, M))


def fit_quality(model, values, m, M, method=MIDPOINT):
    """JS between the discretized model and the empirical pmf of the values."""
    return js_divergence(discretize_gaussian(model, m, M, method), empirical_pmf(values, m, M))

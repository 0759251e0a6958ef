"""
Symmetric geometric (discrete Laplace) noise for user contributions.

The noise k has pmf ((alpha-1)/(alpha+1)) * alpha^-|k|. It is drawn as the
difference of two geometric variables with success probability 1 - 1/alpha,
then truncated to |k| <= truncation_B by resampling so the aggregator's
discrete-log window stays finite.
"""

import math
import numbers
from dataclasses import dataclass

import numpy as np

from src.errors import ArgumentError
from src.logger import setup_logger

log = setup_logger(__name__)

# Upper bound on the per-draw truncation tail budgeted inside delta
TRUNCATION_DELTA_CAP = 1e-9


@dataclass(frozen=True)
class NoiseParams:
    epsilon: float
    delta: float
    sensitivity: int
    alpha: float
    truncation_B: int
    enabled: bool = True

    @property
    def success_probability(self):
        """Parameter of the two geometric draws whose difference is the noise."""
        if not self.enabled:
            return 1.0
        return -math.expm1(-math.log(self.alpha))


def _finite(name, value):
    if not isinstance(value, numbers.Real) or not math.isfinite(value):
        raise ArgumentError(f"{name} must be a finite number, got {value!r}")


def make_noise_params(epsilon, delta, sensitivity, n_users):
    """
    Builds noise parameters with alpha = exp(epsilon / sensitivity).

    Args:
        epsilon: Privacy budget for this channel (> 0).
        delta: Failure probability in (0, 1).
        sensitivity: Integer sensitivity of the channel (>= 1).
        n_users: Number of contributing users (>= 1).

    Returns:
        NoiseParams with a truncation bound whose tail mass per draw stays
        below min(delta, 1e-9) / n_users.
    """
    for name, value in (("epsilon", epsilon), ("delta", delta),
                        ("sensitivity", sensitivity), ("n_users", n_users)):
        _finite(name, value)
    if epsilon <= 0:
        raise ArgumentError("epsilon must be positive")
    if not 0 < delta < 1:
        raise ArgumentError("delta must lie in (0, 1)")
    if sensitivity < 1 or int(sensitivity) != sensitivity:
        raise ArgumentError("sensitivity must be a positive integer")
    if n_users < 1:
        raise ArgumentError("n_users must be at least 1")

    log_alpha = epsilon / sensitivity
    alpha = math.exp(log_alpha)
    delta_trunc = min(delta, TRUNCATION_DELTA_CAP) / n_users
    bound = max(1, math.ceil(math.log(2 * n_users / delta_trunc) / log_alpha))
    return NoiseParams(float(epsilon), float(delta), int(sensitivity), alpha, bound)


def disabled_noise_params(sensitivity=1):
    """The epsilon -> infinity convention: every draw is exactly zero."""
    return NoiseParams(math.inf, 0.0, int(sensitivity), math.inf, 0, enabled=False)


def draw_raw_symmetric_geometric(params, rng, size):
    """Untruncated draws, as a numpy int64 array."""
    if not params.enabled:
        return np.zeros(size, dtype=np.int64)
    p = params.success_probability
    return rng.geometric(p, size=size).astype(np.int64) - rng.geometric(p, size=size).astype(np.int64)


def sample_symmetric_geometric_batch(params, rng, size):
    """Vectorized truncated sampler; rejected draws are redrawn until all fit."""
    samples = draw_raw_symmetric_geometric(params, rng, size)
    if not params.enabled:
        return samples
    rejected = np.abs(samples) > params.truncation_B
    while rejected.any():
        log.debug(f"Resampling {int(rejected.sum())} draws beyond truncation bound.")
        samples[rejected] = draw_raw_symmetric_geometric(params, rng, int(rejected.sum()))
        rejected = np.abs(samples) > params.truncation_B
    return samples


def sample_symmetric_geometric(params, rng):
    """One truncated draw as a Python int."""
    return int(sample_symmetric_geometric_batch(params, rng, 1)[0])


def symmetric_geometric_pmf(params, k):
    """Truncated, normalized pmf on [-B, B]; k may be an int or an array."""
    k = np.asarray(k)
    if not params.enabled:
        return (k == 0).astype(float)
    a = 1.0 / params.alpha
    B = params.truncation_B
    # Mass of [-B, B] under the untruncated pmf
    kept = 1.0 - 2.0 * a ** (B + 1) / (1.0 + a)
    raw = (1.0 - a) / (1.0 + a) * np.power(a, np.abs(k))
    return np.where(np.abs(k) <= B, raw / kept, 0.0)


def noise_std(params):
    """Standard deviation of the untruncated noise: sqrt(2a) / (1 - a)."""
    if not params.enabled:
        return 0.0
    a = 1.0 / params.alpha
    return math.sqrt(2.0 * a) / (1.0 - a)


def noise_sum_bound(params, n_users):
    """Absolute bound on the sum of n_users truncated draws."""
    if not params.enabled:
        return 0
    return n_users * params.truncation_B

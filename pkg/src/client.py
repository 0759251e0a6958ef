"""
User-side pipeline: feature extraction f(x) = (x, x^2), noise, encryption.

Each user turns a profile into K ciphertext pairs (c_j, b_j) with
c_j = g^(x_j + r_j) * H(t)^s_i and b_j = g^(x_j^2 + o_j) * H(t)^s_i.
"""

import time
from dataclasses import dataclass

from src import dpnoise
from src.errors import ArgumentError, ValidationError
from src.group import GroupElement, encode_signed, group_mul, group_pow, hash_to_group
from src.logger import setup_logger

log = setup_logger(__name__)


@dataclass(frozen=True)
class AttributeSpec:
    id: int
    name: str
    min_m: int
    max_M: int
    price: float = 1.0

    def __post_init__(self):
        if self.max_M - self.min_m < 1:
            raise ArgumentError(f"attribute '{self.name}': need min < max, got [{self.min_m}, {self.max_M}]")
        if self.price < 0:
            raise ArgumentError(f"attribute '{self.name}': price must be nonnegative")

    @property
    def support_size(self):
        return self.max_M - self.min_m + 1

    @property
    def square_bounds(self):
        """(min, max) of x^2 over the integer domain [m, M]."""
        lo = 0 if self.min_m <= 0 <= self.max_M else min(self.min_m ** 2, self.max_M ** 2)
        return lo, max(self.min_m ** 2, self.max_M ** 2)

    @property
    def sensitivity_first(self):
        return self.max_M - self.min_m

    @property
    def sensitivity_second(self):
        lo, hi = self.square_bounds
        return max(1, hi - lo)


@dataclass(frozen=True)
class Profile:
    user_id: int
    values: tuple
    sensitivities: tuple = ()

    def value_of(self, position):
        return self.values[position]


@dataclass(frozen=True)
class FeatureVector:
    first_moments: tuple
    second_moments: tuple

    @property
    def dimension(self):
        return len(self.first_moments) + len(self.second_moments)


@dataclass(frozen=True)
class NoisyFeatureVector:
    first_moments: tuple
    second_moments: tuple


@dataclass(frozen=True)
class CipherPair:
    c: GroupElement
    b: GroupElement


@dataclass(frozen=True)
class UserSubmission:
    """What one user hands to the aggregator, plus simulator-only bookkeeping."""
    user_id: int
    pairs: tuple
    noise_first: tuple
    noise_second: tuple
    timings: dict


def validate_profile(profile, specs):
    """Raises ValidationError naming the first attribute out of its domain."""
    if len(profile.values) != len(specs):
        raise ValidationError(
            f"user {profile.user_id}: {len(profile.values)} values for {len(specs)} attributes"
        )
    for value, spec in zip(profile.values, specs):
        if int(value) != value or not spec.min_m <= value <= spec.max_M:
            raise ValidationError(
                f"user {profile.user_id}: {spec.name}={value} outside [{spec.min_m}, {spec.max_M}]",
                attribute=spec.name,
            )
    for lam, spec in zip(profile.sensitivities, specs):
        if not 0.0 <= lam <= 1.0:
            raise ValidationError(
                f"user {profile.user_id}: sensitivity for {spec.name}={lam} outside [0, 1]",
                attribute=spec.name,
            )
    return profile


def extract_features(profile, specs):
    """Component-wise (x, x^2) after validating the profile against its specs."""
    validate_profile(profile, specs)
    first = tuple(int(v) for v in profile.values)
    return FeatureVector(first, tuple(v * v for v in first))


def attribute_noise_params(specs, epsilon, delta, n_users, enabled=True):
    """
    Per-attribute noise for both channels, with epsilon split evenly.

    Returns:
        (first_channel, second_channel) lists of NoiseParams, one per spec.
    """
    if not enabled:
        return ([dpnoise.disabled_noise_params(s.sensitivity_first) for s in specs],
                [dpnoise.disabled_noise_params(s.sensitivity_second) for s in specs])
    half = epsilon / 2.0
    first = [dpnoise.make_noise_params(half, delta, s.sensitivity_first, n_users) for s in specs]
    second = [dpnoise.make_noise_params(half, delta, s.sensitivity_second, n_users) for s in specs]
    return first, second


def draw_noise(fv, noise_first, noise_second, rng):
    """Independent draws r_j, o_j for every entry of the feature vector."""
    k = len(fv.first_moments)
    if len(noise_first) != k or len(noise_second) != k:
        raise ArgumentError("one NoiseParams per attribute per channel is required")
    r = tuple(dpnoise.sample_symmetric_geometric(p, rng) for p in noise_first)
    o = tuple(dpnoise.sample_symmetric_geometric(p, rng) for p in noise_second)
    return r, o


def apply_noise(params, fv, r, o):
    """Adds the drawn noise and signed-encodes every entry into Z_q."""
    first = tuple(encode_signed(params, x + n) for x, n in zip(fv.first_moments, r))
    second = tuple(encode_signed(params, x + n) for x, n in zip(fv.second_moments, o))
    return NoisyFeatureVector(first, second)


def obfuscate(params, fv, noise_first, noise_second, rng):
    r, o = draw_noise(fv, noise_first, noise_second, rng)
    return apply_noise(params, fv, r, o)


def encrypt(params, s_i, tag, nfv):
    """
    Encrypts a noisy feature vector under the user's share and the round tag.

    Args:
        params: GroupParams
        s_i: The user's Scalar share.
        tag: Round tag (bytes), identical for every user of the round.
        nfv: NoisyFeatureVector

    Returns:
        List of K CipherPair, attribute order preserved.
    """
    g = params.generator_g
    blinding = group_pow(params, hash_to_group(params, tag), s_i)
    return [
        CipherPair(
            c=group_mul(params, group_pow(params, g, x), blinding),
            b=group_mul(params, group_pow(params, g, x2), blinding),
        )
        for x, x2 in zip(nfv.first_moments, nfv.second_moments)
    ]


def run_user_pipeline(params, profile, specs, share, tag, noise_first, noise_second, rng):
    """
    Runs extract -> noise -> encrypt for one user, timing each step.

    Returns:
        UserSubmission carrying the ciphertexts and the drawn noise.
    """
    t0 = time.perf_counter()
    fv = extract_features(profile, specs)
    t1 = time.perf_counter()
    r, o = draw_noise(fv, noise_first, noise_second, rng)
    nfv = apply_noise(params, fv, r, o)
    t2 = time.perf_counter()
    pairs = encrypt(params, share, tag, nfv)
    t3 = time.perf_counter()
    return UserSubmission(
        user_id=profile.user_id,
        pairs=tuple(pairs),
        noise_first=r,
        noise_second=o,
        timings={"extract": t1 - t0, "noise": t2 - t1, "encrypt": t3 - t2},
    )

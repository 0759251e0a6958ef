"""
Aggregator side: combine ciphertexts, cancel the blinding with s_0, and
recover noisy sums by a discrete logarithm over a bounded signed window.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache, reduce

from src.errors import ArgumentError, DecodeError, ProtocolError
from src.group import GroupElement, group_mul, group_pow, hash_to_group
from src.logger import setup_logger

log = setup_logger(__name__)

BSGS = "bsgs"
POLLARD_RHO = "pollard_rho"
ALGORITHMS = (BSGS, POLLARD_RHO)
DEFAULT_MAX_WINDOW = 1 << 32
# Windows narrower than this go straight to BSGS
RHO_MIN_WIDTH = 64
RHO_ROUNDS = 4
VARIANCE_FLOOR_FACTOR = 1e-6


@dataclass(frozen=True)
class AggregateCiphers:
    V: tuple
    W: tuple
    n_users: int
    tag: bytes


@dataclass(frozen=True)
class DlogWindow:
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise ArgumentError(f"empty window [{self.lo}, {self.hi}]")

    @property
    def width(self):
        return self.hi - self.lo + 1


@dataclass(frozen=True)
class MomentEstimate:
    mu_hat: float
    sigma2_hat: float
    raw_sum: int
    raw_sum_sq: int
    n_users: int
    clamped: bool = False

    @property
    def mu_fraction(self):
        return Fraction(self.raw_sum, self.n_users)

    @property
    def sigma2_fraction(self):
        """Unclamped estimator sum(x^2)/N - mu^2 in exact arithmetic."""
        return Fraction(self.raw_sum_sq, self.n_users) - self.mu_fraction ** 2


@dataclass(frozen=True)
class DecryptionTelemetry:
    attribute: str
    algorithm: str
    window_width_V: int
    window_width_W: int
    seconds_V: float
    seconds_W: float


def fold_ciphers(params, s_0, tag, contributions):
    """
    Multiplies H(t)^s_0 into the per-attribute products of all contributions.

    No structural checks; combine() is the checked entry point.
    """
    if not contributions:
        raise ProtocolError("no contributions to fold")
    k = len(contributions[0])
    blinding = group_pow(params, hash_to_group(params, tag), s_0)

    def mul(a, b):
        return group_mul(params, a, b)

    V = tuple(reduce(mul, (pairs[j].c for pairs in contributions), blinding) for j in range(k))
    W = tuple(reduce(mul, (pairs[j].b for pairs in contributions), blinding) for j in range(k))
    return AggregateCiphers(V, W, len(contributions), bytes(tag))


def combine(params, s_0, tag, contributions, n_users):
    """
    Computes V_j = H(t)^s_0 * prod_i c_ij and W_j likewise for every attribute.

    Args:
        params: GroupParams
        s_0: Aggregator share.
        tag: Round tag shared by every contribution.
        contributions: One list of K CipherPair per registered user.
        n_users: Number of registered users N.

    Returns:
        AggregateCiphers
    """
    if len(contributions) != n_users:
        raise ProtocolError(f"expected {n_users} contributions, got {len(contributions)}")
    if not contributions:
        raise ProtocolError("no contributions to combine")
    k = len(contributions[0])
    for i, pairs in enumerate(contributions):
        if len(pairs) != k:
            raise ProtocolError(f"contribution {i} carries {len(pairs)} pairs, expected {k}")
    agg = fold_ciphers(params, s_0, tag, contributions)
    log.info(f"Combined {n_users} contributions over {k} attributes.")
    return agg


@lru_cache(maxsize=32)
def build_baby_steps(params, size):
    """Baby-step table {g^j: j} for j < size; immutable once built and shared."""
    P = params.modulus_P
    g = params.generator_g.value
    table = {}
    current = 1
    for j in range(size):
        table.setdefault(current, j)
        current = (current * g) % P
    return table


def _check_window(params, window, max_window):
    if window.width > max_window:
        raise ArgumentError(f"window width {window.width} exceeds maximum {max_window}")
    # Exponents are unique mod q only while the window is no wider than q
    if window.width > params.order_q:
        raise ArgumentError(f"window width {window.width} exceeds the group order")


def _shift_to_window(params, element, lo):
    """element * g^-lo, so the sought exponent becomes e - lo in [0, width)."""
    P, q = params.modulus_P, params.order_q
    return (element.value * pow(params.generator_g.value, (-lo) % q, P)) % P


def _bsgs(params, target, width):
    P, q = params.modulus_P, params.order_q
    m = max(1, math.isqrt(width - 1) + 1)
    table = build_baby_steps(params, m)
    giant = pow(params.generator_g.value, (q - m) % q, P)
    current = target
    for i in range((width + m - 1) // m):
        j = table.get(current)
        if j is not None:
            e = i * m + j
            return e if e < width else None
        current = (current * giant) % P
    return None


def _kangaroo_jumps(width):
    """Power-of-two jumps whose mean is about sqrt(width)/2."""
    target_mean = math.sqrt(width) / 2
    k = 1
    while ((1 << k) - 1) / k < target_mean:
        k += 1
    return [1 << i for i in range(k)]


def _kangaroo(params, target, width, salt):
    P = params.modulus_P
    g = params.generator_g.value
    jumps = _kangaroo_jumps(width)
    k = len(jumps)
    jump_elems = [pow(g, s, P) for s in jumps]

    # Tame kangaroo starts at the top of the window and sets a trap
    tame = pow(g, width - 1, P)
    tame_dist = 0
    for _ in range(4 * (math.isqrt(width) + 1)):
        idx = (tame + salt) % k
        tame = (tame * jump_elems[idx]) % P
        tame_dist += jumps[idx]

    wild = target
    wild_dist = 0
    limit = width - 1 + tame_dist
    while wild_dist <= limit:
        if wild == tame:
            e = width - 1 + tame_dist - wild_dist
            return e if 0 <= e < width else None
        idx = (wild + salt) % k
        wild = (wild * jump_elems[idx]) % P
        wild_dist += jumps[idx]
    return None


def discrete_log(params, element, window, algorithm=BSGS, max_window=DEFAULT_MAX_WINDOW):
    """
    Finds e in [lo, hi] with g^encode_signed(e) = element.

    Args:
        params: GroupParams
        element: GroupElement to decode.
        window: DlogWindow bounding the signed exponent.
        algorithm: "bsgs" (exact) or "pollard_rho" (Pollard's lambda walk on
            the interval, falling back to BSGS when the walk misses).
        max_window: Largest accepted window width.

    Returns:
        The signed exponent.
    """
    if algorithm not in ALGORITHMS:
        raise ArgumentError(f"unknown dlog algorithm '{algorithm}'")
    _check_window(params, window, max_window)
    target = _shift_to_window(params, element, window.lo)
    width = window.width

    offset = None
    if algorithm == POLLARD_RHO and width >= RHO_MIN_WIDTH:
        for salt in range(RHO_ROUNDS):
            offset = _kangaroo(params, target, width, salt)
            if offset is not None:
                break
        if offset is None:
            log.warning(f"Kangaroo walk missed on window width {width}; falling back to BSGS.")
    if offset is None:
        offset = _bsgs(params, target, width)
    if offset is None:
        raise DecodeError(f"no exponent in [{window.lo}, {window.hi}]", window=window)
    return window.lo + offset


def variance_floor(spec):
    return VARIANCE_FLOOR_FACTOR * (spec.max_M - spec.min_m) ** 2


def moment_windows(spec, n_users, bound_first, bound_second):
    """Search windows for log_g V_j and log_g W_j given the noise-sum bounds."""
    sq_lo, sq_hi = spec.square_bounds
    window_V = DlogWindow(n_users * spec.min_m - bound_first, n_users * spec.max_M + bound_first)
    window_W = DlogWindow(min(0, n_users * sq_lo) - bound_second, n_users * sq_hi + bound_second)
    return window_V, window_W


def _recover_one(params, agg, j, spec, bounds, algorithm, max_window):
    n = agg.n_users
    window_V, window_W = moment_windows(spec, n, *bounds)
    try:
        t0 = time.perf_counter()
        raw_sum = discrete_log(params, agg.V[j], window_V, algorithm, max_window)
        t1 = time.perf_counter()
        raw_sum_sq = discrete_log(params, agg.W[j], window_W, algorithm, max_window)
        t2 = time.perf_counter()
    except DecodeError as e:
        raise DecodeError(f"attribute '{spec.name}': {e}", attribute=spec.name, window=e.window) from e

    mu = Fraction(raw_sum, n)
    sigma2 = Fraction(raw_sum_sq, n) - mu * mu
    floor = variance_floor(spec)
    clamped = sigma2 < floor
    if clamped:
        log.warning(f"Variance estimate for '{spec.name}' is {float(sigma2):.6g}; clamped to {floor:.3g}.")
    estimate = MomentEstimate(
        mu_hat=float(mu),
        sigma2_hat=floor if clamped else float(sigma2),
        raw_sum=raw_sum,
        raw_sum_sq=raw_sum_sq,
        n_users=n,
        clamped=clamped,
    )
    telemetry = DecryptionTelemetry(spec.name, algorithm, window_V.width, window_W.width, t1 - t0, t2 - t1)
    return estimate, telemetry


def recover_moments(params, agg, specs, noise_bounds, algorithm=BSGS,
                    max_window=DEFAULT_MAX_WINDOW, telemetry=None, workers=1):
    """
    Decodes (V_j, W_j) into mean and variance estimates for every attribute.

    Args:
        params: GroupParams
        agg: AggregateCiphers from combine().
        specs: AttributeSpec list aligned with agg.V / agg.W.
        noise_bounds: Per attribute (bound on sum r, bound on sum o).
        algorithm: Discrete log algorithm.
        max_window: Largest accepted window width.
        telemetry: Optional list that receives one DecryptionTelemetry per attribute.
        workers: Threads used across attributes.

    Returns:
        List of MomentEstimate in attribute order.
    """
    if len(specs) != len(agg.V) or len(noise_bounds) != len(agg.V):
        raise ArgumentError("specs and noise bounds must match the aggregate's attributes")

    def task(j):
        return _recover_one(params, agg, j, specs[j], noise_bounds[j], algorithm, max_window)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, range(len(specs))))
    else:
        results = [task(j) for j in range(len(specs))]

    if telemetry is not None:
        telemetry.extend(t for _, t in results)
    log.info(f"Recovered moments for {len(results)} attributes.")
    return [e for e, _ in results]

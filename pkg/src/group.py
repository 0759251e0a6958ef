"""
Prime-order subgroup arithmetic and zero-sum key setup.

A Schnorr group: prime modulus P = c*q + 1 with a subgroup of prime order q.
Plaintexts and keys live in Z_q; ciphertexts are elements of the order-q
subgroup. Values are plain Python ints wrapped in small frozen dataclasses so
they can be hashed, compared and passed between threads.
"""

import hashlib
from dataclasses import dataclass
from functools import lru_cache

from Crypto.Util.number import isPrime

from src.errors import ArgumentError, GistError, RangeError, SetupError
from src.logger import setup_logger
from src.utils import derive_rng

log = setup_logger(__name__)

# Probability that a composite passes the primality test
PRIME_ERROR = 2.0 ** -80
MAX_SETUP_ATTEMPTS = 200_000
HASH_COUNTER_LIMIT = 1 << 56
MIN_ORDER_BITS = 8
TEST_SCALE_ORDER_BITS = 32


@dataclass(frozen=True)
class GroupElement:
    value: int


@dataclass(frozen=True)
class Scalar:
    value: int


@dataclass(frozen=True)
class GroupParams:
    modulus_P: int
    order_q: int
    generator_g: GroupElement
    cofactor_c: int

    @property
    def identity(self):
        return GroupElement(1)

    @property
    def modulus_bits(self):
        return self.modulus_P.bit_length()

    @property
    def order_bits(self):
        return self.order_q.bit_length()


@dataclass(frozen=True)
class KeyRing:
    """Shares s_0..s_N; s_0 belongs to the aggregator, s_i to user i."""
    shares: tuple

    @property
    def aggregator_share(self):
        return self.shares[0]

    @property
    def n_users(self):
        return len(self.shares) - 1

    def user_share(self, index):
        """Share of the index-th registered user (1-based)."""
        if not 1 <= index <= self.n_users:
            raise ArgumentError(f"user index {index} outside 1..{self.n_users}")
        return self.shares[index]


def _randbelow(randfunc, n):
    """Uniform integer in [0, n) from a bytes source, by rejection."""
    if n <= 0:
        raise ArgumentError("upper bound must be positive")
    nbits = n.bit_length()
    nbytes = (nbits + 7) // 8
    mask = (1 << nbits) - 1
    while True:
        candidate = int.from_bytes(randfunc(nbytes), "big") & mask
        if candidate < n:
            return candidate


def _random_prime(bits, randfunc):
    for _ in range(MAX_SETUP_ATTEMPTS):
        candidate = _randbelow(randfunc, 1 << (bits - 1)) | (1 << (bits - 1)) | 1
        if isPrime(candidate, false_positive_prob=PRIME_ERROR, randfunc=randfunc):
            return candidate
    raise SetupError(f"no {bits}-bit prime found after {MAX_SETUP_ATTEMPTS} attempts")


def setup_group(modulus_bits, order_bits, seed):
    """
    Generates Schnorr group parameters deterministically from a seed.

    Args:
        modulus_bits: Bit length of the prime modulus P.
        order_bits: Bit length of the prime subgroup order q.
        seed: Seed (str/bytes/int); equal seeds give equal parameters.

    Returns:
        GroupParams satisfying validate_params.
    """
    if order_bits < MIN_ORDER_BITS:
        raise ArgumentError(f"order_bits must be at least {MIN_ORDER_BITS}")
    if modulus_bits < order_bits + 8:
        raise ArgumentError("modulus_bits must be at least order_bits + 8")
    if order_bits < TEST_SCALE_ORDER_BITS:
        log.warning(f"Order of {order_bits} bits is below test scale; use for toy runs only.")

    randfunc = derive_rng(seed, "group", modulus_bits, order_bits).bytes
    q = _random_prime(order_bits, randfunc)

    # P = c*q + 1 must have exactly modulus_bits bits; c even so P is odd
    c_lo = -(-((1 << (modulus_bits - 1)) - 1) // q)
    c_hi = ((1 << modulus_bits) - 2) // q
    if c_hi < c_lo:
        raise SetupError("no cofactor range for the requested sizes")

    modulus = None
    cofactor = None
    for _ in range(MAX_SETUP_ATTEMPTS):
        c = c_lo + _randbelow(randfunc, c_hi - c_lo + 1)
        c -= c % 2
        if c < c_lo or c == 0:
            continue
        candidate = c * q + 1
        if candidate.bit_length() != modulus_bits:
            continue
        if isPrime(candidate, false_positive_prob=PRIME_ERROR, randfunc=randfunc):
            modulus, cofactor = candidate, c
            break
    if modulus is None:
        raise SetupError(f"no {modulus_bits}-bit modulus found after {MAX_SETUP_ATTEMPTS} attempts")

    for _ in range(MAX_SETUP_ATTEMPTS):
        h = 2 + _randbelow(randfunc, modulus - 3)
        g = pow(h, cofactor, modulus)
        if g != 1:
            break
    else:
        raise SetupError("no generator found")

    params = GroupParams(modulus, q, GroupElement(g), cofactor)
    validate_params(params)
    log.info(f"Group ready: |P|={modulus_bits} bits, |q|={order_bits} bits.")
    return params


def validate_params(params):
    """Raises SetupError unless params satisfy every GroupParams invariant."""
    P, q, c = params.modulus_P, params.order_q, params.cofactor_c
    g = params.generator_g.value
    if not isPrime(P, false_positive_prob=PRIME_ERROR):
        raise SetupError("modulus is not prime")
    if not isPrime(q, false_positive_prob=PRIME_ERROR):
        raise SetupError("order is not prime")
    if (P - 1) % q != 0 or c != (P - 1) // q:
        raise SetupError("order does not divide P-1 with the stated cofactor")
    if not 1 < g < P:
        raise SetupError("generator must lie in (1, P)")
    if pow(g, q, P) != 1:
        raise SetupError("generator is not in the order-q subgroup")
    return params


def is_member(params, value):
    """True when value lies in the order-q subgroup."""
    return 0 < value < params.modulus_P and pow(value, params.order_q, params.modulus_P) == 1


def make_element(params, value):
    if not is_member(params, value):
        raise ArgumentError("value is not in the order-q subgroup")
    return GroupElement(value)


def make_scalar(params, value):
    return Scalar(value % params.order_q)


def random_scalar(params, rng):
    """Uniform scalar in [0, q) drawn from a numpy Generator."""
    return Scalar(_randbelow(rng.bytes, params.order_q))


@lru_cache(maxsize=1024)
def _hash_to_group(params, tag):
    P, c = params.modulus_P, params.cofactor_c
    nbytes = (P.bit_length() + 7) // 8 + 16
    for counter in range(HASH_COUNTER_LIMIT):
        message = tag if counter == 0 else tag + counter.to_bytes(7, "big")
        digest = hashlib.shake_256(message).digest(nbytes)
        h = pow(int.from_bytes(digest, "big") % P, c, P)
        if h > 1:
            return GroupElement(h)
    raise GistError("hash_to_group exhausted its counter space")


def hash_to_group(params, tag):
    """
    Maps a round tag into the order-q subgroup.

    Args:
        params: GroupParams
        tag: Nonempty bytes (str is UTF-8 encoded).

    Returns:
        GroupElement h != 1, deterministic per (params, tag).
    """
    if isinstance(tag, str):
        tag = tag.encode("utf-8")
    if not tag:
        raise ArgumentError("tag must be nonempty")
    return _hash_to_group(params, bytes(tag))


def keygen(params, n_users, rng):
    """
    Trusted-dealer setup of zero-sum shares s_0..s_N.

    Args:
        params: GroupParams
        n_users: Number of users N (>= 1).
        rng: numpy Generator owned by the dealer.

    Returns:
        KeyRing with sum of shares = 0 mod q.
    """
    if n_users < 1:
        raise ArgumentError("n_users must be at least 1")
    user_shares = [random_scalar(params, rng) for _ in range(n_users)]
    s0 = Scalar(-sum(s.value for s in user_shares) % params.order_q)
    log.debug(f"Dealt {n_users + 1} shares.")
    return KeyRing((s0, *user_shares))


def group_pow(params, base, e):
    return GroupElement(pow(base.value, e.value, params.modulus_P))


def group_mul(params, a, b):
    return GroupElement((a.value * b.value) % params.modulus_P)


def encode_signed(params, v):
    """Maps a signed integer with |v| < q/2 to Z_q (negatives become q - |v|)."""
    if 2 * abs(v) >= params.order_q:
        raise RangeError(f"|{v}| is not below q/2; signed encoding would be ambiguous")
    return Scalar(v % params.order_q)


def decode_signed(params, s):
    """Inverse of encode_signed: residues above q/2 are read as negatives."""
    v = s.value % params.order_q
    return v if 2 * v < params.order_q else v - params.order_q


def params_to_json(params):
    return {
        "modulus_hex": format(params.modulus_P, "x"),
        "order_hex": format(params.order_q, "x"),
        "generator_hex": format(params.generator_g.value, "x"),
        "cofactor_hex": format(params.cofactor_c, "x"),
    }


def params_from_json(doc):
    try:
        params = GroupParams(
            modulus_P=int(doc["modulus_hex"], 16),
            order_q=int(doc["order_hex"], 16),
            generator_g=GroupElement(int(doc["generator_hex"], 16)),
            cofactor_c=int(doc["cofactor_hex"], 16),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SetupError(f"malformed group parameter document: {e}") from e
    return validate_params(params)


def keyring_to_json(keyring):
    # Simulation artifact: a real deployment never serializes shares together.
    return {
        "secret": False,
        "note": "simulator key ring; all shares in one document",
        "shares_hex": [format(s.value, "x") for s in keyring.shares],
    }


def keyring_from_json(doc):
    try:
        return KeyRing(tuple(Scalar(int(h, 16)) for h in doc["shares_hex"]))
    except (KeyError, TypeError, ValueError) as e:
        raise SetupError(f"malformed key ring document: {e}") from e

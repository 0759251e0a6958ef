import hashlib
import time
import uuid
from contextlib import contextmanager

import numpy as np

# Namespace for deterministic run identifiers, same scheme as URL-based uuid3 ids
URL_NAMESPACE = uuid.NAMESPACE_URL
BASE_URL = "https://gist-simulator.local/"


def as_seed_bytes(seed):
    """Accepts str, bytes or int seeds and returns bytes."""
    if isinstance(seed, bytes):
        return seed
    if isinstance(seed, int):
        return str(seed).encode()
    return str(seed).encode("utf-8")

def _path_entropy(seed, path):
    digest = hashlib.sha256(as_seed_bytes(seed))
    for part in path:
        digest.update(b"/")
        digest.update(str(part).encode("utf-8"))
    return int.from_bytes(digest.digest(), "big")

def derive_rng(seed, *path):
    """
    Returns a numpy Generator for a named stream under the master seed.

    The stream depends only on (seed, path), so per-user streams keyed by user
    id stay identical no matter how the pipelines are scheduled.

    Args:
        seed: Master seed (str, bytes or int).
        *path: Stream labels, e.g. ("user", 17) or ("keygen",).

    Returns:
        numpy.random.Generator
    """
    return np.random.default_rng(np.random.SeedSequence(_path_entropy(seed, path)))

def derive_round_tag(seed, round_index):
    """Round tag t = H(seed || round counter), hex-encoded bytes."""
    digest = hashlib.sha256(as_seed_bytes(seed) + b"|round|" + str(round_index).encode())
    return digest.hexdigest().encode("ascii")

def generate_run_id(seed, round_index=0):
    """
    Generate a deterministic UUID for a protocol run.

    Args:
        seed: Master seed of the run
        round_index: Round counter

    Returns:
        UUID hex string
    """
    url = f"{BASE_URL}runs/{as_seed_bytes(seed).hex()}/rounds/{round_index}"
    return uuid.uuid3(URL_NAMESPACE, url).hex

class StageTimer:
    """Accumulates wall-clock seconds per named stage."""

    def __init__(self):
        self.seconds = {}

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + (time.perf_counter() - start)

    def add(self, name, seconds):
        self.seconds[name] = self.seconds.get(name, 0.0) + seconds

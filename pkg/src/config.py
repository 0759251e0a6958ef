"""
Environment-driven defaults and the JSON files under config/.

Precedence is CLI flag > environment (.env via python-dotenv) > built-in default.
"""

import json
import os

from dotenv import load_dotenv

from src.client import AttributeSpec
from src.errors import ArgumentError, FormatError
from src.logger import setup_logger

log = setup_logger(__name__)

# Pick up a local .env when present; deployed environments set the variables directly
load_dotenv()

DEFAULTS = {
    "GIST_MODULUS_BITS": 1024,
    "GIST_ORDER_BITS": 160,
    "GIST_EPSILON": 1.0,
    "GIST_DELTA": 1e-6,
    "GIST_OMEGA": 0.1,
    "GIST_SEED": "gist",
    "GIST_DLOG_ALGORITHM": "bsgs",
    "GIST_MAX_WINDOW": 1 << 32,
    "GIST_WORKERS": 1,
    "GIST_ATTRIBUTES_PATH": "config/attributes.json",
    "GIST_SYNTHETIC_PATH": "config/synthetic.json",
}


def env_setting(name):
    """Value of a GIST_* setting, cast to the type of its default."""
    if name not in DEFAULTS:
        raise ArgumentError(f"unknown setting '{name}'")
    default = DEFAULTS[name]
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        if isinstance(default, int):
            return int(raw, 0)
        if isinstance(default, float):
            return float(raw)
    except ValueError as e:
        raise ArgumentError(f"environment variable {name}={raw!r} is not a valid {type(default).__name__}") from e
    return raw


def _read_json(path):
    try:
        with open(path, 'r') as f:
            return json.load(f)
    except FileNotFoundError as e:
        log.error(f"Config file not found at {path}")
        raise FormatError(f"configuration file not found: {path}") from e
    except json.JSONDecodeError as e:
        log.error(f"Error decoding JSON from {path}")
        raise FormatError(f"error decoding configuration file {path}: {e}") from e


def parse_attribute_specs(doc):
    """Builds AttributeSpec list (ids 1..K) from [{name, min, max, price}, ...]."""
    if not isinstance(doc, list) or not doc:
        raise FormatError("attribute metadata must be a nonempty list")
    specs = []
    for j, entry in enumerate(doc, start=1):
        try:
            specs.append(AttributeSpec(
                id=j,
                name=str(entry["name"]),
                min_m=int(entry["min"]),
                max_M=int(entry["max"]),
                price=float(entry.get("price", 1.0)),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"attribute entry {j} is malformed: {e}") from e
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise FormatError("attribute names must be unique")
    return specs


def load_attribute_specs(path=None):
    path = path or env_setting("GIST_ATTRIBUTES_PATH")
    specs = parse_attribute_specs(_read_json(path))
    log.debug(f"Loaded {len(specs)} attribute specs from {path}")
    return specs


def load_synthetic_config(path=None):
    """Raw per-attribute family definitions; profile_handler turns them into SyntheticSpec."""
    path = path or env_setting("GIST_SYNTHETIC_PATH")
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise FormatError("synthetic config must map attribute names to families")
    return doc

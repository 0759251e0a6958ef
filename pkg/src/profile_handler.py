"""
Profile ingestion from CSV and the synthetic census-like generator.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import norm, truncnorm

from src.client import Profile
from src.errors import ArgumentError, FormatError, IngestionError
from src.logger import setup_logger
from src.utils import derive_rng

log = setup_logger(__name__)

USER_ID_COLUMN = "user_id"
UNIFORM = "uniform"
TRUNCATED_NORMAL = "truncated-normal"
MIXTURE = "mixture"
FAMILIES = (UNIFORM, TRUNCATED_NORMAL, MIXTURE)
# Smallest support mass a family may place on [m - 1/2, M + 1/2]
MIN_SUPPORT_MASS = 1e-9


def _read_table(csv_path, specs, what):
    try:
        df = pd.read_csv(csv_path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError as e:
        raise FormatError(f"{what} file not found: {csv_path}") from e
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise FormatError(f"{what} file {csv_path} is not valid CSV: {e}") from e

    expected = [USER_ID_COLUMN] + [s.name for s in specs]
    header = [c.strip() for c in df.columns]
    if header != expected:
        raise FormatError(f"{what} header {header} does not match expected {expected}")
    df.columns = header
    return df


def _numeric(df):
    """Every cell as a number, NaN where empty or unparsable."""
    return df.apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))


def _drop(mask, reason, df_index, dropped):
    bad = mask & ~dropped
    for row in df_index[bad]:
        # +2: one header line, and CSV rows are counted from 1
        log.warning(f"Dropping CSV row {row + 2}: {reason}")
    return dropped | mask


def load_profiles(csv_path, specs, return_dropped=False):
    """
    Reads profiles from a CSV with header user_id,<attr1>,...,<attrK>.

    Rows with empty, non-integer or out-of-domain cells, and repeated user ids,
    are dropped and counted.

    Args:
        csv_path: Path of the profile CSV.
        specs: AttributeSpec list in column order.
        return_dropped: Also return the number of dropped rows.

    Returns:
        List of Profile (or (profiles, dropped) when return_dropped is set).
    """
    df = _read_table(csv_path, specs, "profile")
    values = _numeric(df)
    dropped = np.zeros(len(df), dtype=bool)

    dropped = _drop(values.isna().any(axis=1).to_numpy(), "missing or non-numeric cell", df.index, dropped)
    non_integer = (values.fillna(0) % 1 != 0).any(axis=1).to_numpy()
    dropped = _drop(non_integer, "non-integer value", df.index, dropped)
    for spec in specs:
        column = values[spec.name]
        outside = ((column < spec.min_m) | (column > spec.max_M)).to_numpy()
        dropped = _drop(outside, f"{spec.name} outside [{spec.min_m}, {spec.max_M}]", df.index, dropped)
    repeated = values[USER_ID_COLUMN].where(~dropped).duplicated().to_numpy()
    dropped = _drop(repeated, "repeated user_id", df.index, dropped)

    kept = values[~dropped]
    n_dropped = int(dropped.sum())
    if kept.empty:
        raise IngestionError(f"no valid profile rows in {csv_path} ({n_dropped} dropped)")
    if n_dropped:
        log.warning(f"Dropped {n_dropped} of {len(df)} rows from {csv_path}")

    names = [s.name for s in specs]
    profiles = [
        Profile(user_id=int(row[USER_ID_COLUMN]), values=tuple(int(row[n]) for n in names))
        for _, row in kept.iterrows()
    ]
    log.info(f"Loaded {len(profiles)} profiles from {csv_path}")
    return (profiles, n_dropped) if return_dropped else profiles


def load_sensitivities(csv_path, specs):
    """
    Reads a sensitivity CSV shaped like the profile CSV, cells in [0, 1].

    Returns:
        Dict user_id -> tuple of lambda values in attribute order.
    """
    df = _read_table(csv_path, specs, "sensitivity")
    values = _numeric(df)
    lam = values[[s.name for s in specs]]
    bad = (values.isna().any(axis=1) | (lam < 0).any(axis=1) | (lam > 1).any(axis=1)).to_numpy()
    if bad.any():
        raise FormatError(f"{int(bad.sum())} sensitivity rows are empty or outside [0, 1]")
    return {
        int(row[USER_ID_COLUMN]): tuple(float(row[s.name]) for s in specs)
        for _, row in values.iterrows()
    }


def attach_sensitivities(profiles, table):
    """New profiles carrying their lambda rows; every profile must have one."""
    missing = [p.user_id for p in profiles if p.user_id not in table]
    if missing:
        raise IngestionError(f"{len(missing)} users have no sensitivity row, e.g. {missing[:5]}")
    return [Profile(p.user_id, p.values, table[p.user_id]) for p in profiles]


def profiles_frame(profiles, specs):
    """DataFrame with the profile CSV layout."""
    rows = [(p.user_id, *p.values) for p in profiles]
    return pd.DataFrame(rows, columns=[USER_ID_COLUMN] + [s.name for s in specs])


def write_profiles_csv(profiles, specs, csv_path):
    profiles_frame(profiles, specs).to_csv(csv_path, index=False)
    log.info(f"Wrote {len(profiles)} profiles to {csv_path}")


def values_matrix(profiles):
    """N x K int64 matrix of profile values."""
    return np.array([p.values for p in profiles], dtype=np.int64)


@dataclass(frozen=True)
class AttributeFamily:
    name: str
    family: str
    min_m: int
    max_M: int
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SyntheticSpec:
    attributes: tuple

    @property
    def names(self):
        return tuple(a.name for a in self.attributes)


def _components(fam):
    """(loc, scale, weight) triples for the normal-based families."""
    if fam.family == TRUNCATED_NORMAL:
        return [(float(fam.params["loc"]), float(fam.params["scale"]), 1.0)]
    return [(float(c["loc"]), float(c["scale"]), float(c["weight"])) for c in fam.params["components"]]


def check_family(fam):
    """Raises ArgumentError when a family cannot produce values on its support."""
    if fam.family not in FAMILIES:
        raise ArgumentError(f"{fam.name}: unknown family '{fam.family}'")
    if not fam.min_m < fam.max_M:
        raise ArgumentError(f"{fam.name}: support needs m < M")
    if fam.family == UNIFORM:
        return fam
    try:
        components = _components(fam)
    except (KeyError, TypeError, ValueError) as e:
        raise ArgumentError(f"{fam.name}: malformed parameters for '{fam.family}': {e}") from e
    if not components:
        raise ArgumentError(f"{fam.name}: mixture needs at least one component")
    weights = [w for _, _, w in components]
    if any(w < 0 for w in weights) or not math.isclose(sum(weights), 1.0, abs_tol=1e-9):
        raise ArgumentError(f"{fam.name}: mixture weights must be nonnegative and sum to 1")
    lo, hi = fam.min_m - 0.5, fam.max_M + 0.5
    for loc, scale, weight in components:
        if not (math.isfinite(loc) and math.isfinite(scale)) or scale <= 0:
            raise ArgumentError(f"{fam.name}: need finite loc and positive scale")
        mass = norm.cdf(hi, loc, scale) - norm.cdf(lo, loc, scale)
        if weight > 0 and mass < MIN_SUPPORT_MASS:
            raise ArgumentError(f"{fam.name}: N({loc}, {scale}^2) has no usable mass on [{fam.min_m}, {fam.max_M}]")
    return fam


def build_synthetic_spec(specs, doc):
    """
    Pairs each AttributeSpec with its family from the synthetic config.

    Attributes absent from the config are uniform on their support.
    """
    families = []
    for spec in specs:
        entry = dict(doc.get(spec.name, {"family": UNIFORM}))
        family = entry.pop("family", UNIFORM)
        families.append(check_family(AttributeFamily(spec.name, family, spec.min_m, spec.max_M, entry)))
    return SyntheticSpec(tuple(families))


def _sample_normal(loc, scale, m, M, size, rng):
    # Continuous draws on [m - 1/2, M + 1/2] round onto the integers m..M
    a, b = (m - 0.5 - loc) / scale, (M + 0.5 - loc) / scale
    draws = truncnorm.rvs(a, b, loc=loc, scale=scale, size=size, random_state=rng)
    return np.clip(np.rint(draws), m, M).astype(np.int64)


def sample_family(fam, n, rng):
    """n integer draws from one attribute family, all within [m, M]."""
    if fam.family == UNIFORM:
        return rng.integers(fam.min_m, fam.max_M + 1, size=n, dtype=np.int64)
    components = _components(fam)
    if len(components) == 1:
        loc, scale, _ = components[0]
        return _sample_normal(loc, scale, fam.min_m, fam.max_M, n, rng)
    choice = rng.choice(len(components), size=n, p=[w for _, _, w in components])
    out = np.empty(n, dtype=np.int64)
    for idx, (loc, scale, _) in enumerate(components):
        mask = choice == idx
        if mask.any():
            out[mask] = _sample_normal(loc, scale, fam.min_m, fam.max_M, int(mask.sum()), rng)
    return out


def gen_synthetic(spec, n_users, seed):
    """
    Deterministic synthetic profiles, user ids 1..n_users.

    Each attribute draws from its own rng stream derived from (seed, name),
    so adding an attribute leaves the others unchanged.
    """
    if n_users < 1:
        raise ArgumentError("n_users must be at least 1")
    columns = [sample_family(fam, n_users, derive_rng(seed, "synthetic", fam.name)) for fam in spec.attributes]
    matrix = np.column_stack(columns)
    log.info(f"Generated {n_users} synthetic profiles over {len(columns)} attributes.")
    return [Profile(user_id=i + 1, values=tuple(int(v) for v in row)) for i, row in enumerate(matrix)]

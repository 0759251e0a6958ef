"""
Run reports: assembly, stable JSON, CSV export and invariant re-checking.
"""

import copy
import json
import math
from dataclasses import dataclass
from fractions import Fraction

import pandas as pd

from src.errors import FormatError
from src.logger import setup_logger

log = setup_logger(__name__)

SCHEMA_VERSION = "gist-report/1"
TIMING_KEYS = ("timings",)
REL_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ProtocolReport:
    run_id: str
    round_tag: str
    config: dict
    group: dict
    n_users: int
    specs: tuple
    estimates: tuple
    distances: tuple
    fit_quality: tuple
    ranking: object
    decisions: tuple
    costs: dict
    quote: object
    purchase: object
    revenue: object
    audit: tuple
    telemetry: tuple
    timings: dict

    def rank_of(self, attribute_id):
        return self.ranking.order.index(attribute_id) + 1

    def attribute_rows(self):
        """One flat dict per attribute, in configured order."""
        rows = []
        for j, spec in enumerate(self.specs):
            est = self.estimates[j]
            decision = self.decisions[j]
            tel = self.telemetry[j] if j < len(self.telemetry) else None
            rows.append({
                "id": spec.id,
                "attribute": spec.name,
                "min": spec.min_m,
                "max": spec.max_M,
                "price": spec.price,
                "mu_hat": est.mu_hat,
                "sigma2_hat": est.sigma2_hat,
                "variance_clamped": est.clamped,
                "raw_sum": est.raw_sum,
                "raw_sum_sq": est.raw_sum_sq,
                "d_js": self.distances[j],
                "rank": self.rank_of(spec.id),
                "s_count": decision.s_count,
                "gamma": decision.gamma,
                "sellable": decision.sellable,
                "cost": self.costs[spec.id],
                "fit_quality": self.fit_quality[j],
                "window_width_V": tel.window_width_V if tel else None,
                "window_width_W": tel.window_width_W if tel else None,
                "audit": dict(self.audit[j]),
            })
        return rows

    def to_dict(self):
        revenue = self.revenue
        return {
            "schema_version": SCHEMA_VERSION,
            "run_id": self.run_id,
            "round_tag": self.round_tag,
            "n_users": self.n_users,
            "group": dict(self.group),
            "config": self.config,
            "attributes": self.attribute_rows(),
            "ranking": list(self.ranking.order),
            "quote": [
                {"attribute_id": e.attribute_id, "d": e.d, "cost": e.cost}
                for e in self.quote.entries
            ],
            "purchase": sorted(self.purchase.attribute_ids),
            "revenue": {
                "aggregator_revenue": revenue.aggregator_revenue,
                "per_user_revenue": revenue.per_user_revenue,
                "omega": revenue.omega,
                "total": revenue.total,
                "n_users": revenue.n_users,
            },
            "timings": self.timings,
        }


def to_json(doc):
    """Stable serialization: field order is insertion order, never sorted."""
    if isinstance(doc, ProtocolReport):
        doc = doc.to_dict()
    return json.dumps(doc, indent=2)


def write_report(report, path):
    with open(path, 'w') as f:
        f.write(to_json(report))
        f.write("\n")
    log.info(f"Report written to {path}")


def read_report(path):
    try:
        with open(path, 'r') as f:
            doc = json.load(f)
    except FileNotFoundError as e:
        raise FormatError(f"report not found: {path}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"report {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"report {path} does not carry schema version {SCHEMA_VERSION}")
    return doc


def strip_timings(doc):
    """Copy of a report dict without wall-clock fields, for determinism checks."""
    if isinstance(doc, ProtocolReport):
        doc = doc.to_dict()
    stripped = copy.deepcopy(doc)
    for key in TIMING_KEYS:
        stripped.pop(key, None)
    return stripped


def attributes_frame(doc):
    """Per-attribute table with the audit columns flattened."""
    if isinstance(doc, ProtocolReport):
        doc = doc.to_dict()
    return pd.json_normalize(doc["attributes"], sep="_")


def write_attributes_csv(doc, path):
    attributes_frame(doc).to_csv(path, index=False)
    log.info(f"Attribute table written to {path}")


def _close(a, b, rel=REL_TOLERANCE):
    return math.isclose(a, b, rel_tol=rel, abs_tol=1e-12)


def _negative_timings(value, path="timings"):
    if isinstance(value, dict):
        for k, v in value.items():
            yield from _negative_timings(v, f"{path}.{k}")
    elif isinstance(value, (int, float)) and value < 0:
        yield path


def validate_report(doc):
    """
    Re-checks the invariants a report must satisfy.

    Args:
        doc: Report dict (or ProtocolReport).

    Returns:
        List of human-readable problems; empty when the report is consistent.
    """
    if isinstance(doc, ProtocolReport):
        doc = doc.to_dict()
    problems = []
    if doc.get("schema_version") != SCHEMA_VERSION:
        problems.append(f"schema version {doc.get('schema_version')!r} is not {SCHEMA_VERSION}")
        return problems

    n = doc["n_users"]
    cfg = doc["config"]
    rows = doc["attributes"]
    by_id = {r["id"]: r for r in rows}

    names = [r["attribute"] for r in rows]
    expected = cfg["query"]["attributes"] or [a["name"] for a in cfg["attributes"]]
    if sorted(names) != sorted(expected) or len(set(names)) != len(names):
        problems.append(f"attributes {names} do not match the configured set {expected}")

    order = doc["ranking"]
    if sorted(order) != sorted(by_id):
        problems.append("ranking is not a permutation of the attribute ids")
    else:
        ds = [by_id[i]["d_js"] for i in order]
        if any(a > b for a, b in zip(ds, ds[1:])):
            problems.append("ranking is not in increasing order of d")
        for position, i in enumerate(order, start=1):
            if by_id[i]["rank"] != position:
                problems.append(f"attribute {i} has rank {by_id[i]['rank']}, expected {position}")

    for r in rows:
        name = r["attribute"]
        if not 0.0 <= r["d_js"] <= 1.0:
            problems.append(f"{name}: d {r['d_js']} outside [0, 1]")
        if not _close(r["gamma"], r["s_count"] / n):
            problems.append(f"{name}: gamma {r['gamma']} != S/N")
        sellable = 2 * r["s_count"] > n if cfg["gate_rule"] == "majority" else r["s_count"] == n
        if r["sellable"] != sellable:
            problems.append(f"{name}: sellable flag disagrees with the gate rule")
        if not _close(r["cost"], r["price"] * r["d_js"] * n):
            problems.append(f"{name}: cost {r['cost']} != price * d * N")
        if r["mu_hat"] != float(Fraction(r["raw_sum"], n)):
            problems.append(f"{name}: mu_hat does not match raw_sum / N")

        audit = r["audit"]
        if r["raw_sum"] != audit["plain_sum"] + audit["noise_sum_first"]:
            problems.append(f"{name}: raw sum != plaintext sum + noise sum")
        if r["raw_sum_sq"] != audit["plain_sum_sq"] + audit["noise_sum_second"]:
            problems.append(f"{name}: raw sum of squares != plaintext + noise")
        if abs(audit["noise_sum_first"]) > audit["noise_bound_first"]:
            problems.append(f"{name}: first-moment noise exceeds its bound")
        if abs(audit["noise_sum_second"]) > audit["noise_bound_second"]:
            problems.append(f"{name}: second-moment noise exceeds its bound")

    quoted = [e["attribute_id"] for e in doc["quote"]]
    if quoted != [i for i in order if by_id.get(i, {}).get("sellable")]:
        problems.append("quote is not the sellable attributes in ranking order")
    if not set(doc["purchase"]) <= set(quoted):
        problems.append("purchase contains attributes outside the quote")

    revenue = doc["revenue"]
    total = math.fsum(by_id[i]["cost"] for i in doc["purchase"] if i in by_id)
    if not _close(revenue["total"], total):
        problems.append(f"revenue total {revenue['total']} != sum of purchased costs {total}")
    if not _close(revenue["aggregator_revenue"] + n * revenue["per_user_revenue"], revenue["total"]):
        problems.append("revenue is not conserved between aggregator and users")

    problems.extend(f"negative timing at {p}" for p in _negative_timings(doc.get("timings", {})))
    for p in problems:
        log.warning(f"Report check failed: {p}")
    return problems

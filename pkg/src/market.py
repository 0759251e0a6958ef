"""
Monetization: sensitivity gating, pricing, quotes and revenue settlement.
"""

import math
from dataclasses import dataclass

import numpy as np

from src.errors import ArgumentError
from src.logger import setup_logger

log = setup_logger(__name__)

MAJORITY = "majority"
ALL = "all"
GATE_RULES = (MAJORITY, ALL)

ALL_SHARE = "all-share"
PER_USER = "per-user"
PER_ATTRIBUTE = "per-attribute"
SCENARIOS = (ALL_SHARE, PER_USER, PER_ATTRIBUTE)

BUY_ALL = "all"
MOST_VALUABLE = "most-valuable"
LEAST_VALUABLE = "least-valuable"
BUY_NONE = "none"
PURCHASE_POLICIES = (BUY_ALL, MOST_VALUABLE, LEAST_VALUABLE, BUY_NONE)


@dataclass(frozen=True)
class SharingDecision:
    attribute_id: int
    s_count: int
    gamma: float
    sellable: bool


@dataclass(frozen=True)
class QuoteEntry:
    attribute_id: int
    d: float
    cost: float


@dataclass(frozen=True)
class Quote:
    entries: tuple

    @property
    def attribute_ids(self):
        return tuple(e.attribute_id for e in self.entries)


@dataclass(frozen=True)
class PurchaseOrder:
    attribute_ids: frozenset


@dataclass(frozen=True)
class RevenueReport:
    aggregator_revenue: float
    per_user_revenue: float
    omega: float
    total: float
    n_users: int


def gate_attributes(distances, sensitivities, rule=MAJORITY, ids=None):
    """
    Counts the users willing to share each attribute and applies the sale rule.

    User i shares attribute j when d_j <= 1 - lambda_ij.

    Args:
        distances: d_j per attribute.
        sensitivities: N x K matrix of lambda values in [0, 1].
        rule: "majority" (gamma > 1/2) or "all" (gamma == 1).
        ids: Attribute ids aligned with distances (default 1..K).

    Returns:
        List of SharingDecision in attribute order.
    """
    if rule not in GATE_RULES:
        raise ArgumentError(f"unknown gating rule '{rule}'")
    d = np.asarray(distances, dtype=float)
    lam = np.asarray(sensitivities, dtype=float)
    if lam.ndim != 2 or lam.shape[1] != d.shape[0] or lam.shape[0] < 1:
        raise ArgumentError(f"sensitivity matrix of shape {lam.shape} does not fit {d.shape[0]} attributes")
    if ((lam < 0) | (lam > 1)).any():
        raise ArgumentError("sensitivities must lie in [0, 1]")
    if ids is None:
        ids = range(1, d.shape[0] + 1)

    n = lam.shape[0]
    counts = (d[np.newaxis, :] <= 1.0 - lam).sum(axis=0)
    decisions = []
    for attribute_id, s in zip(ids, counts):
        s = int(s)
        sellable = 2 * s > n if rule == MAJORITY else s == n
        decisions.append(SharingDecision(attribute_id, s, s / n, sellable))
    log.debug(f"Gating: {sum(x.sellable for x in decisions)}/{len(decisions)} attributes sellable.")
    return decisions


def price(d, n_users, unit_price):
    """Cost(j) = Price(j) * d_j * N."""
    if not 0.0 <= d <= 1.0:
        raise ArgumentError(f"distance {d} outside [0, 1]")
    if n_users < 1:
        raise ArgumentError("n_users must be at least 1")
    if unit_price < 0:
        raise ArgumentError("unit price must be nonnegative")
    return unit_price * d * n_users


def build_quote(ranking, decisions, costs):
    """
    Lists the sellable attributes as (d, cost) pairs in ranking order.

    Args:
        ranking: LeakageRanking over the attribute ids.
        decisions: SharingDecision per attribute.
        costs: Mapping attribute id -> cost.
    """
    if len(decisions) != len(ranking.distances):
        raise ArgumentError("ranking and sharing decisions cover different attributes")
    sellable = {x.attribute_id for x in decisions if x.sellable}
    # ranking.distances follow the same attribute order as decisions
    distance_of = {x.attribute_id: d for x, d in zip(decisions, ranking.distances)}
    entries = tuple(
        QuoteEntry(attribute_id, distance_of[attribute_id], costs[attribute_id])
        for attribute_id in ranking.order
        if attribute_id in sellable
    )
    log.info(f"Quote built with {len(entries)} of {len(decisions)} attributes.")
    return Quote(entries)


def select_purchase(quote, policy=BUY_ALL):
    """
    The customer's choice among the quoted attributes.

    policy is one of PURCHASE_POLICIES or a callable Quote -> iterable of ids.
    """
    entries = quote.entries
    if callable(policy):
        chosen = frozenset(policy(quote))
        if not chosen <= set(quote.attribute_ids):
            raise ArgumentError("purchase policy chose attributes outside the quote")
        return PurchaseOrder(chosen)
    if policy == BUY_ALL:
        return PurchaseOrder(frozenset(quote.attribute_ids))
    if policy == BUY_NONE or not entries:
        return PurchaseOrder(frozenset())
    if policy == MOST_VALUABLE:
        return PurchaseOrder(frozenset({entries[-1].attribute_id}))
    if policy == LEAST_VALUABLE:
        return PurchaseOrder(frozenset({entries[0].attribute_id}))
    raise ArgumentError(f"unknown purchase policy '{policy}'")


def settle(purchase, costs, n_users, omega):
    """
    Splits the purchase total between the aggregator and the users.

    Args:
        purchase: PurchaseOrder
        costs: Mapping attribute id -> cost.
        n_users: N, the users sharing the remainder equally.
        omega: Aggregator commission in [0, 1], fixed across attributes.

    Returns:
        RevenueReport with R(A) = omega * total and R(i) = (1 - omega) * total / N.
    """
    if not 0.0 <= omega <= 1.0:
        raise ArgumentError(f"omega {omega} outside [0, 1]")
    if n_users < 1:
        raise ArgumentError("n_users must be at least 1")
    unknown = set(purchase.attribute_ids) - set(costs)
    if unknown:
        raise ArgumentError(f"purchase names unknown attributes {sorted(unknown)}")

    total = math.fsum(costs[j] for j in purchase.attribute_ids)
    aggregator = omega * total
    per_user = (total - aggregator) / n_users
    log.info(f"Settled {len(purchase.attribute_ids)} attributes: total {total:.6g}, aggregator {aggregator:.6g}.")
    return RevenueReport(aggregator, per_user, float(omega), total, n_users)


def gen_sensitivities(scenario, n_users, n_attributes, rng):
    """
    Sensitivity matrix for one of the built-in scenarios.

    all-share: every lambda is 0. per-user: one uniform lambda_i repeated over
    the attributes. per-attribute: independent uniform lambda_ij.
    """
    if n_users < 1 or n_attributes < 1:
        raise ArgumentError("need at least one user and one attribute")
    if scenario == ALL_SHARE:
        return np.zeros((n_users, n_attributes))
    if scenario == PER_USER:
        return np.repeat(rng.uniform(0.0, 1.0, size=(n_users, 1)), n_attributes, axis=1)
    if scenario == PER_ATTRIBUTE:
        return rng.uniform(0.0, 1.0, size=(n_users, n_attributes))
    raise ArgumentError(f"unknown scenario '{scenario}'")

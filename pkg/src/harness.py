"""
End-to-end orchestration of one protocol round.

keygen -> user selection -> per-user extract/obfuscate/encrypt -> combine ->
recover moments -> fit/discretize/JS/rank -> gate -> price/quote -> settle.
Every party runs in-process; the simulator additionally keeps the plaintext
sums and noise sums so reports can be audited.
"""

import operator
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from src import aggregator, client, config, group, market, model
from src import profile_handler, report_handler
from src.client import Profile
from src.dpnoise import noise_sum_bound
from src.errors import ArgumentError, ProtocolError, StageError
from src.logger import setup_logger
from src.utils import StageTimer, derive_rng, derive_round_tag, generate_run_id

log = setup_logger(__name__)

FILTER_OPS = {
    "eq": operator.eq,
    "ne": operator.ne,
    "lt": operator.lt,
    "le": operator.le,
    "gt": operator.gt,
    "ge": operator.ge,
}
USER_ID_FIELD = "user_id"

_setup_group = lru_cache(maxsize=8)(group.setup_group)


@dataclass(frozen=True)
class Filter:
    field: str
    op: str
    value: float

    def __post_init__(self):
        if self.op not in FILTER_OPS:
            raise ArgumentError(f"unknown filter operator '{self.op}'")


@dataclass(frozen=True)
class CustomerQuery:
    """
    What the customer asks for: a subset of attributes and a user filter.

    An empty attribute tuple means every configured attribute (batch mode).
    """
    attributes: tuple = ()
    filters: tuple = ()

    @classmethod
    def from_dict(cls, doc):
        doc = doc or {}
        try:
            filters = tuple(Filter(f["field"], f["op"], f["value"]) for f in doc.get("filters", ()))
        except (KeyError, TypeError) as e:
            raise ArgumentError(f"malformed query filter: {e}") from e
        return cls(tuple(doc.get("attributes", ())), filters)

    def to_dict(self):
        return {
            "attributes": list(self.attributes),
            "filters": [{"field": f.field, "op": f.op, "value": f.value} for f in self.filters],
        }


def query_specs(specs, query):
    """The AttributeSpecs the query asks for, in configured order."""
    if not query.attributes:
        return list(specs)
    known = {s.name for s in specs}
    unknown = [a for a in query.attributes if a not in known]
    if unknown:
        raise ArgumentError(f"query names unknown attributes {unknown}")
    wanted = set(query.attributes)
    return [s for s in specs if s.name in wanted]


def select_users(profiles, specs, query):
    """
    Keeps the profiles matching every filter of the query.

    Filters may reference user_id or any attribute name in specs.
    """
    positions = {s.name: j for j, s in enumerate(specs)}
    for f in query.filters:
        if f.field != USER_ID_FIELD and f.field not in positions:
            raise ArgumentError(f"filter references unknown field '{f.field}'")

    def matches(profile):
        for f in query.filters:
            value = profile.user_id if f.field == USER_ID_FIELD else profile.value_of(positions[f.field])
            if not FILTER_OPS[f.op](value, f.value):
                return False
        return True

    selected = [p for p in profiles if matches(p)]
    log.info(f"Query selected {len(selected)} of {len(profiles)} users.")
    return selected


def project_profiles(profiles, specs, chosen):
    """Profiles restricted to the chosen attribute columns."""
    positions = [j for j, s in enumerate(specs) if s in chosen]
    return [
        Profile(
            p.user_id,
            tuple(p.values[j] for j in positions),
            tuple(p.sensitivities[j] for j in positions) if p.sensitivities else (),
        )
        for p in profiles
    ]


class RoundLedger:
    """Remembers every round tag used, rejecting reuse."""

    def __init__(self):
        self._tags = set()

    def register(self, tag):
        if tag in self._tags:
            raise ProtocolError(f"round tag {tag!r} was already used")
        self._tags.add(tag)
        return tag

    def __contains__(self, tag):
        return tag in self._tags

    def __len__(self):
        return len(self._tags)


@dataclass(frozen=True)
class RunConfig:
    n_users: int
    specs: tuple
    modulus_bits: int = 1024
    order_bits: int = 160
    epsilon: float = 1.0
    delta: float = 1e-6
    noise_enabled: bool = True
    omega: float = 0.1
    scenario: str = market.ALL_SHARE
    seed: str = "gist"
    dlog_algorithm: str = aggregator.BSGS
    purchase_policy: object = market.BUY_ALL
    gate_rule: str = market.MAJORITY
    discretization: str = model.MIDPOINT
    max_window: int = aggregator.DEFAULT_MAX_WINDOW
    workers: int = 1
    round_index: int = 0
    query: CustomerQuery = field(default_factory=CustomerQuery)
    profiles_path: str = None
    sensitivities_path: str = None
    synthetic: profile_handler.SyntheticSpec = None
    params: group.GroupParams = None

    def __post_init__(self):
        if self.n_users is not None and self.n_users < 1:
            raise ArgumentError("n_users must be at least 1")
        if self.n_users is None and self.profiles_path is None:
            raise ArgumentError("n_users is required unless profiles come from a file")
        if not self.specs:
            raise ArgumentError("at least one attribute is required")
        for path in (self.profiles_path, self.sensitivities_path):
            if path is not None and not os.path.exists(path):
                raise ArgumentError(f"file not found: {path}")
        if self.scenario not in market.SCENARIOS:
            raise ArgumentError(f"unknown scenario '{self.scenario}'")
        if self.dlog_algorithm not in aggregator.ALGORITHMS:
            raise ArgumentError(f"unknown dlog algorithm '{self.dlog_algorithm}'")
        if not callable(self.purchase_policy) and self.purchase_policy not in market.PURCHASE_POLICIES:
            raise ArgumentError(f"unknown purchase policy '{self.purchase_policy}'")
        if self.gate_rule not in market.GATE_RULES:
            raise ArgumentError(f"unknown gating rule '{self.gate_rule}'")
        if self.discretization not in (model.MIDPOINT, model.CDF):
            raise ArgumentError(f"unknown discretization method '{self.discretization}'")
        if not 0.0 <= self.omega <= 1.0:
            raise ArgumentError("omega must lie in [0, 1]")
        if self.workers < 1:
            raise ArgumentError("workers must be at least 1")

    @classmethod
    def from_env(cls, n_users, specs=None, **overrides):
        """Config with defaults taken from the GIST_* environment settings."""
        values = {
            "modulus_bits": config.env_setting("GIST_MODULUS_BITS"),
            "order_bits": config.env_setting("GIST_ORDER_BITS"),
            "epsilon": config.env_setting("GIST_EPSILON"),
            "delta": config.env_setting("GIST_DELTA"),
            "omega": config.env_setting("GIST_OMEGA"),
            "seed": config.env_setting("GIST_SEED"),
            "dlog_algorithm": config.env_setting("GIST_DLOG_ALGORITHM"),
            "max_window": config.env_setting("GIST_MAX_WINDOW"),
            "workers": config.env_setting("GIST_WORKERS"),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        if specs is None:
            specs = config.load_attribute_specs()
        return cls(n_users=n_users, specs=tuple(specs), **values)

    def next_round(self):
        return replace(self, round_index=self.round_index + 1)

    def to_dict(self):
        policy = self.purchase_policy if isinstance(self.purchase_policy, str) else "custom"
        return {
            "n_users": self.n_users,
            "attributes": [
                {"id": s.id, "name": s.name, "min": s.min_m, "max": s.max_M, "price": s.price}
                for s in self.specs
            ],
            "modulus_bits": self.modulus_bits,
            "order_bits": self.order_bits,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "noise_enabled": self.noise_enabled,
            "omega": self.omega,
            "scenario": self.scenario,
            "seed": self.seed if isinstance(self.seed, str) else repr(self.seed),
            "dlog_algorithm": self.dlog_algorithm,
            "purchase_policy": policy,
            "gate_rule": self.gate_rule,
            "discretization": self.discretization,
            "round_index": self.round_index,
            "query": self.query.to_dict(),
            "profiles_path": self.profiles_path,
            "sensitivities_path": self.sensitivities_path,
        }


@contextmanager
def _stage(timer, name):
    """Times a stage and labels any failure inside it with the stage name."""
    try:
        with timer.stage(name):
            yield
    except StageError:
        raise
    except Exception as e:
        log.error(f"Stage '{name}' failed: {e}")
        raise StageError(name, e) from e


def _load_population(cfg):
    specs = list(cfg.specs)
    if cfg.profiles_path:
        profiles = profile_handler.load_profiles(cfg.profiles_path, specs)
        if cfg.n_users is not None:
            if len(profiles) < cfg.n_users:
                raise ArgumentError(f"{cfg.profiles_path} has {len(profiles)} valid profiles, {cfg.n_users} requested")
            profiles = profiles[:cfg.n_users]
    else:
        synthetic = cfg.synthetic or profile_handler.build_synthetic_spec(specs, config.load_synthetic_config())
        profiles = profile_handler.gen_synthetic(synthetic, cfg.n_users, cfg.seed)
    if cfg.sensitivities_path:
        table = profile_handler.load_sensitivities(cfg.sensitivities_path, specs)
        profiles = profile_handler.attach_sensitivities(profiles, table)
    return profiles


def _sensitivity_matrix(cfg, profiles, n_attributes):
    if all(p.sensitivities for p in profiles):
        return np.array([p.sensitivities for p in profiles], dtype=float)
    return market.gen_sensitivities(cfg.scenario, len(profiles), n_attributes, derive_rng(cfg.seed, "sensitivities"))


def _run_clients(cfg, params, profiles, specs, keyring, tag, noise_first, noise_second):
    def task(indexed):
        index, profile = indexed
        # Stream keyed by user id so the draw does not depend on scheduling
        rng = derive_rng(cfg.seed, "round", cfg.round_index, "user", profile.user_id)
        return client.run_user_pipeline(
            params, profile, specs, keyring.user_share(index), tag, noise_first, noise_second, rng,
        )

    work = list(enumerate(profiles, start=1))
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(task, work))
    return [task(w) for w in work]


def _client_timings(submissions):
    per_user = {}
    for name in ("extract", "noise", "encrypt"):
        per_user[name] = float(np.mean([s.timings[name] for s in submissions]))
    return per_user


def run_protocol(cfg, ledger=None):
    """
    Runs one full round for the given RunConfig.

    Args:
        cfg: RunConfig
        ledger: RoundLedger shared across rounds; a fresh one when omitted.

    Returns:
        report_handler.ProtocolReport
    """
    ledger = ledger if ledger is not None else RoundLedger()
    timer = StageTimer()
    started = time.perf_counter()

    with _stage(timer, "setup"):
        params = cfg.params or _setup_group(cfg.modulus_bits, cfg.order_bits, cfg.seed)

    with _stage(timer, "selection"):
        population = _load_population(cfg)
        specs = query_specs(cfg.specs, cfg.query)
        selected = select_users(population, list(cfg.specs), cfg.query)
        if not selected:
            raise ArgumentError("the query selected no users")
        profiles = project_profiles(selected, list(cfg.specs), specs)
        n = len(profiles)
        lam = _sensitivity_matrix(cfg, profiles, len(specs))

    with _stage(timer, "keygen"):
        keyring = group.keygen(params, n, derive_rng(cfg.seed, "round", cfg.round_index, "keygen"))
        tag = ledger.register(derive_round_tag(cfg.seed, cfg.round_index))
        noise_first, noise_second = client.attribute_noise_params(
            specs, cfg.epsilon, cfg.delta, n, enabled=cfg.noise_enabled,
        )

    with _stage(timer, "client"):
        submissions = _run_clients(cfg, params, profiles, specs, keyring, tag, noise_first, noise_second)

    with _stage(timer, "combine"):
        agg = aggregator.combine(params, keyring.aggregator_share, tag, [s.pairs for s in submissions], n)

    telemetry = []
    bounds = [
        (noise_sum_bound(nf, n), noise_sum_bound(ns, n))
        for nf, ns in zip(noise_first, noise_second)
    ]
    with _stage(timer, "dlog"):
        estimates = aggregator.recover_moments(
            params, agg, specs, bounds, cfg.dlog_algorithm, cfg.max_window, telemetry, cfg.workers,
        )

    values = profile_handler.values_matrix(profiles)
    with _stage(timer, "model"):
        models = [model.fit_gaussian(e) for e in estimates]
        distances = [model.leakage(m, s.min_m, s.max_M, cfg.discretization) for m, s in zip(models, specs)]
        ranking = model.rank_attributes(distances, [s.id for s in specs])
        fit = [
            model.fit_quality(m, values[:, j], s.min_m, s.max_M, cfg.discretization)
            for j, (m, s) in enumerate(zip(models, specs))
        ]

    with _stage(timer, "market"):
        decisions = market.gate_attributes(distances, lam, cfg.gate_rule, [s.id for s in specs])
        costs = {s.id: market.price(d, n, s.price) for s, d in zip(specs, distances)}
        quote = market.build_quote(ranking, decisions, costs)
        purchase = market.select_purchase(quote, cfg.purchase_policy)
        revenue = market.settle(purchase, costs, n, cfg.omega)

    audit = [
        {
            "plain_sum": int(values[:, j].sum()),
            "plain_sum_sq": int((values[:, j] ** 2).sum()),
            "noise_sum_first": int(sum(s.noise_first[j] for s in submissions)),
            "noise_sum_second": int(sum(s.noise_second[j] for s in submissions)),
            "noise_bound_first": bounds[j][0],
            "noise_bound_second": bounds[j][1],
        }
        for j in range(len(specs))
    ]
    timings = dict(timer.seconds)
    timings["client_per_user"] = _client_timings(submissions)
    timings["dlog_per_attribute"] = {
        t.attribute: {"V": t.seconds_V, "W": t.seconds_W} for t in telemetry
    }
    timings["total"] = time.perf_counter() - started

    log.info(f"Round {cfg.round_index} finished for {n} users in {timings['total']:.3f}s.")
    return report_handler.ProtocolReport(
        run_id=generate_run_id(cfg.seed, cfg.round_index),
        round_tag=tag.decode("ascii"),
        config=cfg.to_dict(),
        group={"modulus_bits": params.modulus_bits, "order_bits": params.order_bits},
        n_users=n,
        specs=tuple(specs),
        estimates=tuple(estimates),
        distances=tuple(distances),
        fit_quality=tuple(fit),
        ranking=ranking,
        decisions=tuple(decisions),
        costs=costs,
        quote=quote,
        purchase=purchase,
        revenue=revenue,
        audit=tuple(audit),
        telemetry=tuple(telemetry),
        timings=timings,
    )


def run_rounds(cfg, n_rounds, ledger=None):
    """Consecutive rounds with fresh tags, sharing one ledger."""
    if n_rounds < 1:
        raise ArgumentError("n_rounds must be at least 1")
    ledger = ledger if ledger is not None else RoundLedger()
    reports = []
    for _ in range(n_rounds):
        reports.append(run_protocol(cfg, ledger))
        cfg = cfg.next_round()
    return reports

import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from src import client, config, dpnoise, harness, model, profile_handler, report_handler
from src.client import AttributeSpec, Profile
from src.errors import ArgumentError, ProtocolError, StageError
from src.harness import CustomerQuery, Filter, RoundLedger, RunConfig
from src.model import GaussianModel

CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"


def _config(specs, params, n_users=20, **kw):
    # Light noise keeps these rounds close to their plaintext moments
    kw.setdefault("epsilon", 50.0)
    return RunConfig(
        n_users=n_users,
        specs=tuple(specs),
        params=params,
        synthetic=profile_handler.build_synthetic_spec(specs, {}),
        **kw,
    )


@pytest.fixture
def three_users_csv(tmp_path):
    path = tmp_path / "profiles.csv"
    path.write_text("user_id,score\n1,2\n2,3\n3,4\n")
    return str(path)


class TestRunConfig:
    def test_needs_users_or_file(self, specs):
        with pytest.raises(ArgumentError):
            RunConfig(n_users=None, specs=tuple(specs))
        with pytest.raises(ArgumentError):
            RunConfig(n_users=0, specs=tuple(specs))

    def test_missing_profile_file(self, specs, tmp_path):
        with pytest.raises(ArgumentError):
            RunConfig(n_users=None, specs=tuple(specs), profiles_path=str(tmp_path / "absent.csv"))

    @pytest.mark.parametrize("field, value", [
        ("scenario", "some-share"),
        ("dlog_algorithm", "shanks"),
        ("purchase_policy", "cheapest"),
        ("gate_rule", "quorum"),
        ("discretization", "simpson"),
        ("omega", 1.5),
        ("workers", 0),
    ])
    def test_rejects_bad_fields(self, specs, field, value):
        with pytest.raises(ArgumentError):
            RunConfig(n_users=5, specs=tuple(specs), **{field: value})

    def test_from_env(self, specs, monkeypatch):
        monkeypatch.setenv("GIST_EPSILON", "0.5")
        monkeypatch.setenv("GIST_SEED", "from-env")
        cfg = RunConfig.from_env(10, specs, omega=0.3, seed=None)
        assert cfg.epsilon == 0.5
        assert cfg.omega == 0.3
        assert cfg.seed == "from-env"

    def test_next_round(self, specs):
        cfg = RunConfig(n_users=5, specs=tuple(specs))
        assert cfg.next_round().round_index == 1
        assert cfg.round_index == 0


class TestQuery:
    population = [Profile(1, (10, 4, 30)), Profile(2, (60, 12, 45)), Profile(3, (80, 16, 70))]

    def test_select_by_attribute(self, specs):
        query = CustomerQuery(filters=(Filter("income", "ge", 60),))
        assert [p.user_id for p in harness.select_users(self.population, specs, query)] == [2, 3]

    def test_select_by_user_id(self, specs):
        query = CustomerQuery(filters=(Filter("user_id", "ne", 2), Filter("age", "lt", 50)))
        assert [p.user_id for p in harness.select_users(self.population, specs, query)] == [1]

    def test_unknown_field(self, specs):
        with pytest.raises(ArgumentError):
            harness.select_users(self.population, specs, CustomerQuery(filters=(Filter("height", "eq", 1),)))

    def test_unknown_operator(self):
        with pytest.raises(ArgumentError):
            Filter("income", "like", 1)

    def test_attribute_subset_keeps_configured_order(self, specs):
        chosen = harness.query_specs(specs, CustomerQuery(attributes=("age", "income")))
        assert [s.name for s in chosen] == ["income", "age"]
        projected = harness.project_profiles(self.population[:1], specs, chosen)
        assert projected == [Profile(1, (10, 30))]

    def test_unknown_attribute(self, specs):
        with pytest.raises(ArgumentError):
            harness.query_specs(specs, CustomerQuery(attributes=("height",)))

    def test_dict_round_trip(self):
        query = CustomerQuery(("income",), (Filter("age", "gt", 30),))
        assert CustomerQuery.from_dict(query.to_dict()) == query

    def test_malformed_filter(self):
        with pytest.raises(ArgumentError):
            CustomerQuery.from_dict({"filters": [{"field": "age"}]})


def test_ledger_rejects_reuse():
    ledger = RoundLedger()
    ledger.register(b"t-1")
    assert b"t-1" in ledger
    with pytest.raises(ProtocolError):
        ledger.register(b"t-1")
    assert len(ledger) == 1


class TestRunProtocol:
    def test_three_users_from_csv(self, params64, small_spec, three_users_csv):
        cfg = RunConfig(n_users=None, specs=(small_spec,), params=params64,
                        profiles_path=three_users_csv, noise_enabled=False)
        report = harness.run_protocol(cfg)
        est, = report.estimates
        assert report.n_users == 3
        assert est.mu_hat == 3.0
        assert est.sigma2_fraction == Fraction(2, 3)
        expected = model.leakage(GaussianModel(3.0, 2 / 3), 1, 10)
        assert report.distances == (pytest.approx(expected),)
        assert report.costs == {1: pytest.approx(expected * 3)}
        assert report_handler.validate_report(report) == []

    def test_sensitivity_file(self, params64, small_spec, three_users_csv, tmp_path):
        lam = tmp_path / "lam.csv"
        lam.write_text("user_id,score\n1,0\n2,0\n3,1\n")
        cfg = RunConfig(n_users=None, specs=(small_spec,), params=params64, profiles_path=three_users_csv,
                        sensitivities_path=str(lam), noise_enabled=False)
        decision, = harness.run_protocol(cfg).decisions
        assert decision.s_count == 2
        assert decision.sellable

    def test_matches_plaintext_oracle(self, params64):
        rng = np.random.default_rng(31)
        for case in range(50):
            k = int(rng.integers(1, 6))
            specs = []
            for i in range(1, k + 1):
                lo = int(rng.integers(0, 60))
                specs.append(AttributeSpec(i, f"a{i}", lo, int(rng.integers(lo + 1, 121))))
            n = int(rng.integers(1, 1001))
            cfg = _config(specs, params64, n_users=n, noise_enabled=False, seed=f"oracle-{case}",
                          scenario=str(rng.choice(["all-share", "per-user", "per-attribute"])))
            values = profile_handler.values_matrix(profile_handler.gen_synthetic(cfg.synthetic, n, cfg.seed))
            report = harness.run_protocol(cfg)
            for j, (spec, est, d) in enumerate(zip(report.specs, report.estimates, report.distances)):
                column = [int(x) for x in values[:, j]]
                mean = Fraction(sum(column), n)
                variance = Fraction(sum(x * x for x in column), n) - mean ** 2
                assert est.mu_fraction == mean
                assert est.sigma2_fraction == variance
                assert est.mu_hat == float(mean)
                if not est.clamped:
                    assert est.sigma2_hat == float(variance)
                fitted = GaussianModel(est.mu_hat, est.sigma2_hat)
                assert d == pytest.approx(model.leakage(fitted, spec.min_m, spec.max_M), abs=1e-12)
            assert report_handler.validate_report(report) == []

    def test_noise_stays_within_bounds(self, params64, specs):
        report = harness.run_protocol(_config(specs, params64, n_users=25, seed="noisy"))
        assert any(a["noise_sum_first"] != 0 for a in report.audit)
        for est, audit in zip(report.estimates, report.audit):
            assert abs(audit["noise_sum_first"]) <= audit["noise_bound_first"]
            assert abs(audit["noise_sum_second"]) <= audit["noise_bound_second"]
            assert est.raw_sum == audit["plain_sum"] + audit["noise_sum_first"]
        assert report_handler.validate_report(report) == []

    @pytest.mark.parametrize("n_users", [10, 100])
    def test_default_budget_rounds_complete(self, params64, n_users):
        specs = config.load_attribute_specs(str(CONFIG_DIR / "attributes.json"))
        families = config.load_synthetic_config(str(CONFIG_DIR / "synthetic.json"))
        runs = 100
        within_three_std = np.zeros(len(specs), dtype=int)
        for i in range(runs):
            cfg = RunConfig(n_users=n_users, specs=tuple(specs), params=params64, epsilon=1.0, seed=f"eps1-{i}",
                            synthetic=profile_handler.build_synthetic_spec(specs, families))
            report = harness.run_protocol(cfg)
            first, _ = client.attribute_noise_params(specs, cfg.epsilon, cfg.delta, n_users)
            for j, (est, audit) in enumerate(zip(report.estimates, report.audit)):
                error = abs(est.mu_fraction - Fraction(audit["plain_sum"], n_users))
                assert error <= Fraction(dpnoise.noise_sum_bound(first[j], n_users), n_users)
                sum_std = math.sqrt(n_users) * dpnoise.noise_std(first[j])
                within_three_std[j] += float(error) <= 3 * sum_std / n_users
                assert 0.0 <= report.fit_quality[j] <= 1.0
            assert report_handler.validate_report(report) == []
        assert (within_three_std >= 0.95 * runs).all()

    @pytest.mark.parametrize("seed", ["fit-a", "fit-b", "fit-c"])
    def test_fit_quality_improves_with_more_users(self, params64, seed):
        specs = config.load_attribute_specs(str(CONFIG_DIR / "attributes.json"))
        families = config.load_synthetic_config(str(CONFIG_DIR / "synthetic.json"))
        query = CustomerQuery(attributes=("income", "age"))

        def fit(n_users):
            cfg = RunConfig(n_users=n_users, specs=tuple(specs), params=params64, noise_enabled=False, seed=seed,
                            query=query, synthetic=profile_handler.build_synthetic_spec(specs, families))
            return harness.run_protocol(cfg).fit_quality

        for small, large in zip(fit(100), fit(1000)):
            assert large <= small * 1.5

    def test_deterministic_across_workers(self, params64, specs):
        one = harness.run_protocol(_config(specs, params64, seed="same"))
        many = harness.run_protocol(_config(specs, params64, seed="same", workers=3))
        assert report_handler.strip_timings(one) == report_handler.strip_timings(many)

    def test_seed_changes_the_round(self, params64, specs):
        a = harness.run_protocol(_config(specs, params64, seed="a"))
        b = harness.run_protocol(_config(specs, params64, seed="b"))
        assert a.round_tag != b.round_tag
        assert a.run_id != b.run_id

    def test_timings_recorded(self, params64, specs):
        timings = harness.run_protocol(_config(specs, params64, n_users=5)).timings
        for stage in ("setup", "selection", "keygen", "client", "combine", "dlog", "model", "market"):
            assert timings[stage] >= 0
        assert set(timings["client_per_user"]) == {"extract", "noise", "encrypt"}
        assert set(timings["dlog_per_attribute"]) == {"income", "education", "age"}
        assert timings["total"] >= timings["dlog"]

    def test_tag_reuse_fails_in_keygen(self, params64, specs):
        cfg = _config(specs, params64, n_users=3)
        ledger = RoundLedger()
        harness.run_protocol(cfg, ledger)
        with pytest.raises(StageError) as err:
            harness.run_protocol(cfg, ledger)
        assert err.value.stage == "keygen"
        assert isinstance(err.value.cause, ProtocolError)

    def test_query_subset_and_filter(self, params64, specs):
        query = CustomerQuery(attributes=("education",), filters=(Filter("income", "ge", 50),))
        cfg = _config(specs, params64, n_users=40, query=query)
        population = profile_handler.gen_synthetic(cfg.synthetic, 40, cfg.seed)
        report = harness.run_protocol(cfg)
        assert [s.name for s in report.specs] == ["education"]
        assert report.n_users == sum(p.values[0] >= 50 for p in population)
        assert report_handler.validate_report(report) == []

    def test_empty_selection_is_labelled(self, params64, specs):
        query = CustomerQuery(filters=(Filter("income", "gt", 1000),))
        with pytest.raises(StageError) as err:
            harness.run_protocol(_config(specs, params64, n_users=5, query=query))
        assert err.value.stage == "selection"
        assert isinstance(err.value.cause, ArgumentError)

    def test_narrow_window_fails_in_dlog(self, params64, specs):
        with pytest.raises(StageError) as err:
            harness.run_protocol(_config(specs, params64, n_users=5, max_window=16))
        assert err.value.stage == "dlog"

    def test_purchase_policy(self, params64, specs):
        report = harness.run_protocol(_config(specs, params64, purchase_policy="none"))
        assert report.revenue.total == 0.0
        assert report.purchase.attribute_ids == frozenset()


def test_run_rounds_uses_fresh_tags(params64, specs):
    ledger = RoundLedger()
    reports = harness.run_rounds(_config(specs, params64, n_users=4), 3, ledger)
    assert len({r.round_tag for r in reports}) == 3
    assert [r.config["round_index"] for r in reports] == [0, 1, 2]
    assert len(ledger) == 3

import copy
import json

import pandas as pd
import pytest

from src import harness, profile_handler, report_handler
from src.errors import FormatError
from src.harness import RunConfig


@pytest.fixture
def report(params64, specs):
    cfg = RunConfig(
        n_users=12,
        specs=tuple(specs),
        params=params64,
        epsilon=50.0,
        scenario="per-attribute",
        seed="report-tests",
        synthetic=profile_handler.build_synthetic_spec(specs, {}),
    )
    return harness.run_protocol(cfg)


@pytest.fixture
def doc(report):
    return json.loads(report_handler.to_json(report))


def test_fresh_report_is_valid(doc):
    assert report_handler.validate_report(doc) == []


def test_layout(doc, report):
    assert doc["schema_version"] == report_handler.SCHEMA_VERSION
    assert list(doc)[:3] == ["schema_version", "run_id", "round_tag"]
    assert [r["attribute"] for r in doc["attributes"]] == ["income", "education", "age"]
    assert doc["ranking"] == list(report.ranking.order)
    assert [r["rank"] for r in sorted(doc["attributes"], key=lambda r: r["rank"])] == [1, 2, 3]


def test_rank_of(report):
    first = report.ranking.order[0]
    assert report.rank_of(first) == 1


def test_write_and_read(tmp_path, report):
    path = tmp_path / "report.json"
    report_handler.write_report(report, str(path))
    loaded = report_handler.read_report(str(path))
    assert loaded == json.loads(report_handler.to_json(report))
    assert report_handler.validate_report(loaded) == []


def test_read_rejects_other_documents(tmp_path):
    path = tmp_path / "other.json"
    path.write_text(json.dumps({"schema_version": "something-else"}))
    with pytest.raises(FormatError):
        report_handler.read_report(str(path))
    path.write_text("[")
    with pytest.raises(FormatError):
        report_handler.read_report(str(path))
    with pytest.raises(FormatError):
        report_handler.read_report(str(tmp_path / "absent.json"))


def test_strip_timings(doc):
    stripped = report_handler.strip_timings(doc)
    assert "timings" not in stripped
    assert "timings" in doc


def test_attribute_csv(tmp_path, doc):
    path = tmp_path / "attributes.csv"
    report_handler.write_attributes_csv(doc, str(path))
    frame = pd.read_csv(path)
    assert list(frame["attribute"]) == ["income", "education", "age"]
    assert "audit_plain_sum" in frame.columns
    assert "audit_noise_bound_second" in frame.columns


def _first_problem_mentions(doc, text):
    problems = report_handler.validate_report(doc)
    assert problems, "expected the corrupted report to be rejected"
    assert any(text in p for p in problems), problems


def _by_rank(doc, rank):
    return next(r for r in doc["attributes"] if r["rank"] == rank)


class TestCorruptedReports:
    def test_wrong_schema(self, doc):
        doc["schema_version"] = "gist-report/0"
        _first_problem_mentions(doc, "schema version")

    def test_missing_attribute(self, doc):
        doc["attributes"] = doc["attributes"][:2]
        _first_problem_mentions(doc, "configured set")

    def test_ranking_out_of_order(self, doc):
        doc["ranking"] = doc["ranking"][::-1]
        _first_problem_mentions(doc, "ranking")

    def test_distance_out_of_range(self, doc):
        doc["attributes"][0]["d_js"] = 1.5
        _first_problem_mentions(doc, "outside [0, 1]")

    def test_gamma(self, doc):
        doc["attributes"][1]["gamma"] += 0.25
        _first_problem_mentions(doc, "gamma")

    def test_sellable_flag(self, doc):
        row = doc["attributes"][2]
        row["sellable"] = not row["sellable"]
        _first_problem_mentions(doc, "sellable flag")

    def test_cost(self, doc):
        doc["attributes"][0]["cost"] *= 2
        _first_problem_mentions(doc, "cost")

    def test_mean(self, doc):
        doc["attributes"][0]["mu_hat"] += 1.0
        _first_problem_mentions(doc, "mu_hat")

    def test_audit_sum(self, doc):
        doc["attributes"][1]["audit"]["plain_sum"] += 1
        _first_problem_mentions(doc, "plaintext sum")

    def test_noise_bound(self, doc):
        audit = doc["attributes"][0]["audit"]
        audit["noise_bound_first"] = abs(audit["noise_sum_first"]) - 1
        _first_problem_mentions(doc, "exceeds its bound")

    def test_purchase_outside_quote(self, doc):
        doc["quote"] = []
        _first_problem_mentions(doc, "quote")

    def test_revenue(self, doc):
        doc["revenue"]["per_user_revenue"] += 1.0
        _first_problem_mentions(doc, "conserved")

    def test_negative_timing(self, doc):
        doc["timings"]["dlog"] = -1.0
        _first_problem_mentions(doc, "negative timing at timings.dlog")

    def test_unchanged_copy_still_valid(self, doc):
        assert report_handler.validate_report(copy.deepcopy(doc)) == []

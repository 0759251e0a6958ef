"""
Repeated protocol runs summarized as median and p95 per stage.
"""

import numpy as np

from src.errors import ArgumentError
from src.harness import RoundLedger, run_protocol
from src.logger import setup_logger

log = setup_logger(__name__)

BROKER_STAGES = ("keygen", "combine", "dlog", "model", "market")
CLIENT_STAGES = ("extract", "noise", "encrypt")


def summarize(samples):
    """Median / p95 of a list of seconds."""
    arr = np.asarray(samples, dtype=float)
    return {
        "median": float(np.median(arr)),
        "p95": float(np.percentile(arr, 95)),
        "samples": len(arr),
    }


def _collect(timings, samples):
    per_user = timings["client_per_user"]
    for name in CLIENT_STAGES:
        samples.setdefault(f"client.{name}", []).append(per_user[name])
    samples.setdefault("client.per_user", []).append(sum(per_user[n] for n in CLIENT_STAGES))
    for name in BROKER_STAGES:
        samples.setdefault(f"broker.{name}", []).append(timings[name])
    samples.setdefault("broker.total", []).append(sum(timings[n] for n in BROKER_STAGES))
    for attribute, t in timings["dlog_per_attribute"].items():
        samples.setdefault(f"dlog.{attribute}", []).append(t["V"] + t["W"])
    samples.setdefault("total", []).append(timings["total"])


def bench(cfg, repetitions):
    """
    Runs the protocol `repetitions` times with fresh round tags.

    Args:
        cfg: RunConfig for the first round; later rounds bump round_index.
        repetitions: Number of runs (>= 1).

    Returns:
        Dict stage -> {median, p95, samples}. Client stages are per user;
        broker stages cover the whole population; dlog.<name> is per attribute.
    """
    if repetitions < 1:
        raise ArgumentError("repetitions must be at least 1")
    ledger = RoundLedger()
    samples = {}
    for rep in range(repetitions):
        report = run_protocol(cfg, ledger)
        _collect(report.timings, samples)
        log.debug(f"Bench repetition {rep + 1}/{repetitions} done.")
        cfg = cfg.next_round()
    result = {stage: summarize(values) for stage, values in samples.items()}
    log.info(f"Bench over {repetitions} repetitions: client per user median "
             f"{result['client.per_user']['median'] * 1e3:.3f} ms, broker median "
             f"{result['broker.total']['median']:.3f} s.")
    return result

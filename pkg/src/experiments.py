"""
Parameter sweeps over population size and sensitivity scenario.

Each row carries what the accuracy, leakage and revenue curves are drawn from.
"""

from dataclasses import replace

import pandas as pd

from src.errors import ArgumentError
from src.harness import run_protocol
from src.logger import setup_logger

log = setup_logger(__name__)

SWEEP_COLUMNS = [
    "n_users", "scenario", "attribute", "fit_quality", "d_js", "gamma", "cost",
    "aggregator_revenue", "per_user_revenue",
]


def sweep(cfg, n_values, scenarios=None):
    """
    Runs the protocol once per (N, scenario) pair.

    Args:
        cfg: Base RunConfig; n_users and scenario are overridden per run.
        n_values: Population sizes to try.
        scenarios: Sensitivity scenarios (default: the one in cfg).

    Returns:
        pandas DataFrame with SWEEP_COLUMNS, one row per attribute per run.
    """
    n_values = list(n_values)
    if not n_values:
        raise ArgumentError("sweep needs at least one population size")
    scenarios = list(scenarios or [cfg.scenario])
    rows = []
    for scenario in scenarios:
        for n in n_values:
            report = run_protocol(replace(cfg, n_users=n, scenario=scenario))
            for row in report.attribute_rows():
                rows.append({
                    "n_users": report.n_users,
                    "scenario": scenario,
                    "attribute": row["attribute"],
                    "fit_quality": row["fit_quality"],
                    "d_js": row["d_js"],
                    "gamma": row["gamma"],
                    "cost": row["cost"],
                    "aggregator_revenue": report.revenue.aggregator_revenue,
                    "per_user_revenue": report.revenue.per_user_revenue,
                })
            log.info(f"Sweep point N={n}, scenario={scenario} done.")
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)

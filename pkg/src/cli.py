"""
Command-line surface: setup, gen-data, run, bench, validate, sweep.
"""

import argparse
import json
import sys

from src import config, group, market, model, profile_handler, report_handler
from src.aggregator import BSGS, POLLARD_RHO
from src.bench import bench
from src.client import Profile
from src.errors import GistError
from src.experiments import sweep
from src.harness import CustomerQuery, Filter, RunConfig, run_rounds
from src.logger import set_global_level, setup_logger
from src.utils import derive_rng

log = setup_logger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INVALID_REPORT = 3
DLOG_CHOICES = {"bsgs": BSGS, "rho": POLLARD_RHO}


def _parse_filter(text):
    """field:op:value, e.g. age:ge:30."""
    try:
        field, op, value = text.split(":")
        return Filter(field, op, float(value))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"filter '{text}' is not field:op:value ({e})")


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"'{text}' is not a comma-separated list of integers")


def _add_run_arguments(p):
    p.add_argument("--n-users", type=int, default=None, help="Number of users (default: all profiles in --profiles)")
    p.add_argument("--profiles", default=None, help="Profile CSV (default: synthetic data)")
    p.add_argument("--sensitivities", default=None, help="Sensitivity CSV shaped like the profile CSV")
    p.add_argument("--attrs", default=None, help="Attribute metadata JSON")
    p.add_argument("--synthetic", default=None, help="Synthetic family JSON")
    p.add_argument("--params", default=None, help="Group parameter JSON written by `setup`")
    p.add_argument("--modulus-bits", type=int, default=None)
    p.add_argument("--order-bits", type=int, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--no-noise", action="store_true", help="Disable the differential privacy noise")
    p.add_argument("--omega", type=float, default=None, help="Aggregator commission in [0, 1]")
    p.add_argument("--scenario", choices=market.SCENARIOS, default=market.ALL_SHARE)
    p.add_argument("--seed", default=None)
    p.add_argument("--dlog", choices=sorted(DLOG_CHOICES), default=None)
    p.add_argument("--policy", choices=market.PURCHASE_POLICIES, default=market.BUY_ALL)
    p.add_argument("--gate-rule", choices=market.GATE_RULES, default=market.MAJORITY)
    p.add_argument("--method", choices=(model.MIDPOINT, model.CDF), default=model.MIDPOINT)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--query-attrs", default=None, help="Comma-separated attribute subset (interactive mode)")
    p.add_argument("--filter", dest="filters", type=_parse_filter, action="append", default=[],
                   help="User filter field:op:value; repeatable")


def build_parser():
    parser = argparse.ArgumentParser(prog="gist", description="Privacy-preserving aggregation and monetization simulator")
    parser.add_argument("--log-level", default=None, help="Overrides LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("setup", help="Generate group parameters")
    p.add_argument("--modulus-bits", type=int, default=None)
    p.add_argument("--order-bits", type=int, default=None)
    p.add_argument("--seed", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-data", help="Write a synthetic profile CSV")
    p.add_argument("--n-users", type=int, required=True)
    p.add_argument("--attrs", default=None)
    p.add_argument("--synthetic", default=None)
    p.add_argument("--seed", default=None)
    p.add_argument("--scenario", choices=market.SCENARIOS, default=None,
                   help="Also write a sensitivity CSV for this scenario")
    p.add_argument("--sensitivities-out", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="Run the full protocol")
    _add_run_arguments(p)
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--out", default="report.json")
    p.add_argument("--csv", default=None, help="Also export the per-attribute table")

    p = sub.add_parser("bench", help="Time repeated protocol runs")
    _add_run_arguments(p)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--out", default=None)

    p = sub.add_parser("validate", help="Re-check a report's invariants")
    p.add_argument("report")

    p = sub.add_parser("sweep", help="Sweep population sizes and scenarios")
    _add_run_arguments(p)
    p.add_argument("--n-values", type=_int_list, default=[10, 100, 1000])
    p.add_argument("--scenarios", default=None, help="Comma-separated scenarios")
    p.add_argument("--out", default="sweep.csv")
    return parser


def config_from_args(args, n_users=None):
    specs = config.load_attribute_specs(args.attrs)
    synthetic = None
    if args.profiles is None:
        synthetic = profile_handler.build_synthetic_spec(specs, config.load_synthetic_config(args.synthetic))
    params = None
    if args.params:
        with open(args.params, 'r') as f:
            params = group.params_from_json(json.load(f))
    query = CustomerQuery(
        attributes=tuple(a.strip() for a in args.query_attrs.split(",")) if args.query_attrs else (),
        filters=tuple(args.filters),
    )
    return RunConfig.from_env(
        n_users=args.n_users if n_users is None else n_users,
        specs=specs,
        modulus_bits=args.modulus_bits,
        order_bits=args.order_bits,
        epsilon=args.epsilon,
        delta=args.delta,
        noise_enabled=not args.no_noise,
        omega=args.omega,
        scenario=args.scenario,
        seed=args.seed,
        dlog_algorithm=DLOG_CHOICES[args.dlog] if args.dlog else None,
        purchase_policy=args.policy,
        gate_rule=args.gate_rule,
        discretization=args.method,
        workers=args.workers,
        query=query,
        profiles_path=args.profiles,
        sensitivities_path=args.sensitivities,
        synthetic=synthetic,
        params=params,
    )


def _cmd_setup(args):
    params = group.setup_group(
        args.modulus_bits or config.env_setting("GIST_MODULUS_BITS"),
        args.order_bits or config.env_setting("GIST_ORDER_BITS"),
        args.seed or config.env_setting("GIST_SEED"),
    )
    with open(args.out, 'w') as f:
        json.dump(group.params_to_json(params), f, indent=2)
    log.info(f"Group parameters written to {args.out}")
    return EXIT_OK


def _cmd_gen_data(args):
    specs = config.load_attribute_specs(args.attrs)
    seed = args.seed or config.env_setting("GIST_SEED")
    spec = profile_handler.build_synthetic_spec(specs, config.load_synthetic_config(args.synthetic))
    profiles = profile_handler.gen_synthetic(spec, args.n_users, seed)
    profile_handler.write_profiles_csv(profiles, specs, args.out)
    if args.scenario and args.sensitivities_out:
        lam = market.gen_sensitivities(args.scenario, len(profiles), len(specs), derive_rng(seed, "sensitivities"))
        rows = [Profile(p.user_id, tuple(float(x) for x in row)) for p, row in zip(profiles, lam)]
        profile_handler.write_profiles_csv(rows, specs, args.sensitivities_out)
    return EXIT_OK


def _cmd_run(args):
    cfg = config_from_args(args)
    reports = run_rounds(cfg, args.rounds)
    if len(reports) == 1:
        report_handler.write_report(reports[0], args.out)
    else:
        _write_rounds(reports, args.out)
    if args.csv:
        report_handler.write_attributes_csv(reports[-1], args.csv)
    return EXIT_OK


def _write_rounds(reports, path):
    with open(path, 'w') as f:
        json.dump([r.to_dict() for r in reports], f, indent=2)
    log.info(f"{len(reports)} round reports written to {path}")


def _cmd_bench(args):
    result = bench(config_from_args(args), args.reps)
    text = json.dumps(result, indent=2)
    if args.out:
        with open(args.out, 'w') as f:
            f.write(text)
    else:
        print(text)
    return EXIT_OK


def _cmd_validate(args):
    problems = report_handler.validate_report(report_handler.read_report(args.report))
    if problems:
        for p in problems:
            print(f"FAIL: {p}")
        return EXIT_INVALID_REPORT
    print(f"OK: {args.report}")
    return EXIT_OK


def _cmd_sweep(args):
    scenarios = args.scenarios.split(",") if args.scenarios else None
    # Each sweep point overrides N; the base config only needs a valid one
    base_n = args.n_users or (args.n_values[0] if args.n_values else None)
    frame = sweep(config_from_args(args, base_n), args.n_values, scenarios)
    frame.to_csv(args.out, index=False)
    log.info(f"Sweep of {len(frame)} rows written to {args.out}")
    return EXIT_OK


COMMANDS = {
    "setup": _cmd_setup,
    "gen-data": _cmd_gen_data,
    "run": _cmd_run,
    "bench": _cmd_bench,
    "validate": _cmd_validate,
    "sweep": _cmd_sweep,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.log_level:
        set_global_level(args.log_level.upper())
    try:
        return COMMANDS[args.command](args)
    except GistError as e:
        log.error(f"{args.command} failed: {e}")
        return EXIT_ERROR
    except OSError as e:
        log.error(f"{args.command} failed on file access: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

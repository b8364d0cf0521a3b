"""Command-line entry points: index, simulate, sweep, verify.

Exit codes: 0 success, 1 configuration problem, 2 solver failure,
3 verification-suite failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import ALL_POLICIES, Policy, SystemConfig
from .errors import (
    BracketFailure,
    ConfigError,
    DegenerateChain,
    NoConvergence,
    SingularSystem,
)
from .experiments import (
    ExperimentSpec,
    build_tables,
    load_preset,
    parse_config,
    record_lines,
    run_sweep,
    simulate_policies,
    sweep_summary,
)
from .simulator import generate_streams, simulate_arrays, write_trace
from .verify import full_suite
from .whittle import read_table, write_table

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_VERIFY = 3

_SOLVER_ERRORS = (NoConvergence, SingularSystem, DegenerateChain, BracketFailure)


def _load(args) -> SystemConfig | ExperimentSpec:
    if args.preset and args.config:
        raise ConfigError("give either --preset or --config, not both")
    if args.preset:
        return load_preset(args.preset)
    if args.config:
        return parse_config(args.config)
    raise ConfigError("one of --preset or --config is required")


def _base_config(loaded, args) -> SystemConfig:
    cfg = loaded.base if isinstance(loaded, ExperimentSpec) else loaded
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "warmup", None) is not None:
        cfg = replace(cfg, warmup=args.warmup)
    return cfg


def _cmd_index(args) -> int:
    cfg = _base_config(_load(args), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tables = build_tables(cfg)
    for table in tables:
        write_table(table, out / f"user_{table.user_id:02d}.tsv")
    print(f"wrote {len(tables)} index tables to {out}")
    return EXIT_OK


def _parse_policies(arg: str | None) -> tuple[Policy, ...]:
    if not arg:
        return ALL_POLICIES
    try:
        return tuple(Policy(name.strip()) for name in arg.split(","))
    except ValueError as exc:
        raise ConfigError(f"unknown policy in {arg!r}: {exc}") from exc


def _cmd_simulate(args) -> int:
    loaded = _load(args)
    cfg = _base_config(loaded, args)
    policies = _parse_policies(args.policies)
    n_reps = args.reps if args.reps is not None else (
        loaded.n_reps if isinstance(loaded, ExperimentSpec) else 20
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    tables = None
    if Policy.WHITTLE in policies:
        if args.tables:
            tdir = Path(args.tables)
            tables = tuple(
                read_table(tdir / f"user_{i:02d}.tsv") for i in range(cfg.num_users)
            )
        else:
            tables = build_tables(cfg)

    aggregates, records = simulate_policies(
        cfg, policies=policies, n_reps=n_reps, tables=tables
    )
    (out / "records.tsv").write_text(record_lines(records), encoding="ascii")
    summary = {
        policy.value: {
            "avg_cost": agg.avg_cost.mean,
            "avg_cost_ci": agg.avg_cost.ci_half_width,
            "avg_delay": agg.avg_delay.mean,
            "avg_delay_ci": agg.avg_delay.ci_half_width,
            "avg_active_beams": agg.avg_active_beams.mean,
            "avg_active_beams_ci": agg.avg_active_beams.ci_half_width,
        }
        for policy, agg in aggregates.items()
    }
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="ascii"
    )
    if args.trace:
        for policy in policies:
            pol_cfg = replace(cfg, policy=policy)
            raw = simulate_arrays(
                pol_cfg,
                generate_streams(pol_cfg),
                tables=tables if policy is Policy.WHITTLE else None,
                trace=True,
            )
            write_trace(raw, out / f"trace_{policy.value}.tsv")
    for policy, agg in aggregates.items():
        print(
            f"{policy.value}: avg_cost={agg.avg_cost.mean:.4f} "
            f"(+/- {agg.avg_cost.ci_half_width:.4f}) "
            f"avg_delay={agg.avg_delay.mean:.4f} "
            f"active_beams={agg.avg_active_beams.mean:.4f}"
        )
    return EXIT_OK


def _cmd_sweep(args) -> int:
    loaded = _load(args)
    if isinstance(loaded, SystemConfig):
        loaded = ExperimentSpec(name="adhoc", base=loaded)
    if args.seed is not None:
        loaded = replace(loaded, base=replace(loaded.base, seed=args.seed))
    if args.reps is not None:
        loaded = replace(loaded, n_reps=args.reps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    points, records = run_sweep(loaded)
    (out / "records.tsv").write_text(record_lines(records), encoding="ascii")
    (out / "summary.json").write_text(
        json.dumps(sweep_summary(loaded, points), indent=2, sort_keys=True) + "\n",
        encoding="ascii",
    )
    print(f"swept {len(points)} points x {len(loaded.policies)} policies into {out}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    report = full_suite(
        n_param_sets=args.param_sets,
        n_taxes=args.taxes,
        buffer_size=args.buffer,
        seed=args.seed if args.seed is not None else 20_260_810,
        index_param_sets=args.index_sets,
    )
    text = report.render()
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="ascii")
    return EXIT_OK if report.passed else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beamsched",
        description="Whittle-index beam scheduling solver and simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_source(p):
        p.add_argument("--config", help="JSON config or experiment file")
        p.add_argument("--preset", help="bundled experiment name (fig3a ... table2)")
        p.add_argument("--seed", type=int, default=None, help="override the root seed")

    p_index = sub.add_parser("index", help="build and write per-user index tables")
    add_source(p_index)
    p_index.add_argument("--out", required=True, help="output directory")
    p_index.set_defaults(func=_cmd_index)

    p_sim = sub.add_parser("simulate", help="replicated runs of one system")
    add_source(p_sim)
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--policies", help="comma-separated subset of policies")
    p_sim.add_argument("--reps", type=int, default=None, help="replication count")
    p_sim.add_argument("--warmup", type=int, default=None, help="override warmup slots")
    p_sim.add_argument("--tables", help="directory of index tables from `index`")
    p_sim.add_argument("--trace", action="store_true", help="emit per-slot traces")
    p_sim.set_defaults(func=_cmd_simulate)

    p_sweep = sub.add_parser("sweep", help="run an experiment sweep")
    add_source(p_sweep)
    p_sweep.add_argument("--out", required=True, help="output directory")
    p_sweep.add_argument("--reps", type=int, default=None, help="override replication count")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the structural property suite")
    p_verify.add_argument("--param-sets", type=int, default=20, dest="param_sets")
    p_verify.add_argument("--taxes", type=int, default=15)
    p_verify.add_argument("--buffer", type=int, default=60)
    p_verify.add_argument("--index-sets", type=int, default=4, dest="index_sets")
    p_verify.add_argument("--seed", type=int, default=None)
    p_verify.add_argument("--out", help="also write the report to this file")
    p_verify.set_defaults(func=_cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

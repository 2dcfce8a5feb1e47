"""Command-line interface.

Subcommands: ``gen`` (random instance), ``plan-single`` (one agent),
``plan-fleet`` (clustered multi-agent), ``simulate`` (forward validation of a
plan file), ``validate`` (validation report only).  All outputs are JSON or
CSV files.  Exit codes: 0 success, 1 numeric failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import PlannerConfig
from .covariance import ConvergenceError, EngineError
from .cycles import SteadyStateCache, cycle_lower_bound, cycle_to_document
from .dwell import Plan, PlanningError, plan_single_agent
from .fleet import FleetError, cluster_subnetwork, partition_to_document, plan_fleet
from .model import (
    InstanceError,
    generate_random_instance,
    instance_to_document,
    load_instance_file,
)
from .simulate import simulate, trace_to_csv, validate


def _config_from_args(args) -> PlannerConfig:
    cfg = PlannerConfig()
    if getattr(args, "kp", None) is not None:
        if args.kp <= 0:
            raise InstanceError("--kp must be positive")
        cfg = dataclasses.replace(cfg, k_p=args.kp)
    if getattr(args, "tol", None) is not None:
        if args.tol <= 0:
            raise InstanceError("--tol must be positive")
        cfg = dataclasses.replace(cfg, balance_tol=args.tol)
    if getattr(args, "sigma", None) is not None:
        if args.sigma <= 0:
            raise InstanceError("--sigma must be positive")
        cfg = dataclasses.replace(cfg, sigma=args.sigma)
    if getattr(args, "periods", None) is not None:
        if args.periods < 2:
            raise InstanceError("--periods must be at least 2")
        cfg = dataclasses.replace(cfg, num_periods=args.periods)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args) -> int:
    network, fleet = generate_random_instance(
        args.targets, seed=args.seed or 0, num_agents=args.agents or 1
    )
    path = Path(args.out or "instance.json")
    _write_json(path, instance_to_document(network, fleet))
    print(f"wrote {path} ({args.targets} targets, {fleet.num_agents} agents)")
    return 0


def _write_single_plan(network, cfg, out: Path, stem: str = "plan") -> Plan:
    cache = SteadyStateCache(network)
    plan = plan_single_agent(network, cache, cfg)
    _write_json(out / f"{stem}.json", plan.to_document())
    metric = cycle_lower_bound(plan.cycle, cache)
    _write_json(out / "cycle.json", cycle_to_document(plan.cycle, metric, cache))
    with open(out / "convergence.csv", "w", encoding="utf-8") as fh:
        fh.write("iteration,max_peak_cost\n")
        for k, v in enumerate(plan.balance_trace):
            fh.write(f"{k},{v:.12g}\n")
    return plan


def cmd_plan_single(args) -> int:
    network, fleet = load_instance_file(args.instance)
    cfg = _config_from_args(args)
    out = _out_dir(args)
    plan = _write_single_plan(network, cfg, out)
    print(
        f"plan: period {plan.period:.6g}, predicted cost {plan.j_pred:.6g}, "
        f"{len(plan.active)} active, {len(plan.excluded)} excluded -> {out / 'plan.json'}"
    )
    return 0


def cmd_plan_fleet(args) -> int:
    network, fleet = load_instance_file(args.instance)
    agents = args.agents or fleet.num_agents
    if agents > len(network.ids):
        raise InstanceError(f"{agents} agents exceed {len(network.ids)} targets")
    cfg = _config_from_args(args)
    out = _out_dir(args)
    if agents == 1:
        plan = _write_single_plan(network, cfg, out)
        print(
            f"single agent: period {plan.period:.6g}, predicted cost {plan.j_pred:.6g} "
            f"-> {out / 'plan.json'}"
        )
        return 0
    cache = SteadyStateCache(network)
    partition = plan_fleet(network, agents, cache, cfg)
    _write_json(out / "fleet.json", partition_to_document(partition, cache))
    for k, plan in enumerate(partition.plans):
        _write_json(out / f"plan_agent{k + 1}.json", plan.to_document())
    print(
        f"fleet: {agents} agents, worst cost floor {partition.fleet_metric:.6g}, "
        f"worst predicted cost {partition.fleet_cost:.6g}, "
        f"{len(partition.tes_log)} exchanges -> {out / 'fleet.json'}"
    )
    return 0


def _load_plan(args):
    network, _ = load_instance_file(args.instance)
    with open(args.plan, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    covers = set(doc.get("covers", network.ids))
    if covers != set(network.ids):
        network = cluster_subnetwork(network, covers)
    return network, Plan.from_document(network, doc)


def cmd_simulate(args) -> int:
    network, plan = _load_plan(args)
    cfg = _config_from_args(args)
    out = _out_dir(args)
    trace = simulate(plan, network, num_periods=cfg.num_periods, config=cfg)
    with open(out / "trace.csv", "w", encoding="utf-8") as fh:
        fh.write(trace_to_csv(trace))
    report = validate(plan, trace)
    _write_json(out / "validation.json", report)
    print(
        f"simulated {trace.num_periods} periods: realized {report['realized_cost']:.6g} "
        f"vs predicted {report['predicted_cost']:.6g} "
        f"(rel err {report['relative_error']:.2e}) -> {out / 'trace.csv'}"
    )
    return 0 if report["prediction_consistent"] else 1


def cmd_validate(args) -> int:
    network, plan = _load_plan(args)
    cfg = _config_from_args(args)
    out = _out_dir(args)
    trace = simulate(plan, network, num_periods=cfg.num_periods, config=cfg)
    report = validate(plan, trace)
    _write_json(out / "validation.json", report)
    ok = report["prediction_consistent"] and report["metric_floor_holds"]
    print(
        f"validation: consistent={report['prediction_consistent']} "
        f"floor_holds={report['metric_floor_holds']} "
        f"peaks_at_switches={report['peaks_at_switches']} -> {out / 'validation.json'}"
    )
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patrolplan",
        description="Plan and validate periodic monitoring schedules over a target network.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, instance=True):
        if instance:
            p.add_argument("--instance", required=True, help="instance JSON file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory (or file for gen)")
        p.add_argument("--kp", type=float, default=None, help="consensus gain")
        p.add_argument("--tol", type=float, default=None, help="balancing tolerance")
        p.add_argument("--sigma", type=float, default=None, help="similarity kernel width")
        p.add_argument("--periods", type=int, default=None, help="simulation periods")

    p = sub.add_parser("gen", help="generate a random instance")
    p.add_argument("--targets", type=int, required=True)
    p.add_argument("--agents", type=int, default=1)
    common(p, instance=False)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("plan-single", help="plan one agent over the instance")
    common(p)
    p.set_defaults(func=cmd_plan_single)

    p = sub.add_parser("plan-fleet", help="partition the network and plan every agent")
    p.add_argument("--agents", type=int, default=None, help="override the instance agent count")
    common(p)
    p.set_defaults(func=cmd_plan_fleet)

    p = sub.add_parser("simulate", help="simulate a plan and write trace + report")
    p.add_argument("--plan", required=True, help="plan JSON file")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="simulate a plan and write the report only")
    p.add_argument("--plan", required=True, help="plan JSON file")
    common(p)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InstanceError, FileNotFoundError) as exc:
        _emit_error("input", exc)
        return 2
    except (ConvergenceError, EngineError, PlanningError, FleetError) as exc:
        _emit_error("numeric", exc)
        return 1
    except ValueError as exc:
        _emit_error("input", exc)
        return 2


def _emit_error(kind: str, exc: Exception) -> None:
    record = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())

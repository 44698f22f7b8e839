"""Command-line interface.

Subcommands: tree, steady-state, simulate, center, verify, oracle-compare.
Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 numeric failure.  Given the same command line and seed, emitted CSV and
JSON files are byte-identical across runs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import scenarios
from .controller import ProportionalLaw, RotationConfig, ZeroLaw, run_centering
from .dynamics import ModelParams, simulate
from .errors import ConfigError, NumericsError, ScheduleError, SpectralError, TopologyError
from .frame_oracle import compare_fluid_oracle, oracle_simulate
from .graph import (
    build_incidence,
    consistent_ordering,
    is_strongly_connected,
    load_graph,
    outward_spanning_tree,
    validate_ordering,
)
from .spectral import laplacian, metzler_left_eigenvector, projector_and_ginverse, spectral_gap, steady_state
from .verify import centering_comparison, run_all, self_test

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _print_json(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def _scenario_from_args(args) -> scenarios.Scenario:
    config_fields = {}
    for name in ("k", "k2", "epsilon"):
        value = getattr(args, name.replace("k2", "k2"), None)
        if value is not None:
            config_fields[name] = value
    kwargs = dict(config_fields)
    if getattr(args, "scenario", None):
        name = args.scenario
        if name == "triangle":
            scen = scenarios.triangle(delta=args.delta, dt=args.dt, **kwargs)
        elif name == "mesh":
            scen = scenarios.mesh(delta=args.delta, seed=args.seed, dt=args.dt, **kwargs)
        elif name == "random":
            if args.n is None:
                raise ConfigError("--scenario random needs --n")
            scen = scenarios.random_scenario(
                args.n, args.seed, delta=args.delta, root=args.root or 1, dt=args.dt, **kwargs
            )
        elif Path(name).exists():
            scen = scenarios.scenario_from_file(name, **kwargs)
        else:
            raise ConfigError(f"unknown scenario {name!r} (and no such file)")
    elif getattr(args, "graph", None):
        graph, file_root = load_graph(args.graph)
        root = args.root or file_root or 1
        omega = scenarios.omega_spread(graph.node_count, delta=args.delta, seed=args.seed)
        scen = scenarios.Scenario(
            name=Path(args.graph).stem,
            graph=graph,
            root=root,
            omega_u=omega,
            config=RotationConfig(**config_fields),
            dt=args.dt,
        )
    else:
        raise ConfigError("need --scenario NAME or --graph FILE")
    if args.root is not None and scen.root != args.root:
        scen = scenarios.with_overrides(scen, root=args.root)
    return scen


def _outdir(args) -> Path:
    out = Path(getattr(args, "out", ".") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_tree(args) -> int:
    scen = _scenario_from_args(args)
    tree = outward_spanning_tree(scen.graph, scen.root)
    schedule = consistent_ordering(tree)
    doc = {
        "root": tree.root,
        "tree_edges": list(tree.tree_edges),
        "parent_edge": {str(node): edge for node, edge in tree.parent_edge.items()},
        "schedule": list(schedule),
    }
    if args.order:
        requested = tuple(int(v) for v in args.order.split(","))
        ok = validate_ordering(tree, requested)
        doc["requested_order"] = list(requested)
        doc["requested_order_valid"] = ok
        _print_json(doc)
        if not ok:
            print("requested ordering violates the tree partial order", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    _print_json(doc)
    return EXIT_OK


def cmd_steady_state(args) -> int:
    scen = _scenario_from_args(args)
    if not is_strongly_connected(scen.graph):
        raise TopologyError("graph is not strongly connected")
    inc = build_incidence(scen.graph)
    Q = laplacian(inc)
    spec = projector_and_ginverse(Q, metzler_left_eigenvector(Q))
    omega_ss, beta_ss = steady_state(spec, inc.B, scen.config.k, scen.omega_u)
    _print_json(
        {
            "omega_ss": float(omega_ss[0]),
            "omega_ss_vector": [float(v) for v in omega_ss],
            "beta_ss": [float(v) for v in beta_ss],
            "spectral_gap": spectral_gap(Q),
            "k": scen.config.k,
        }
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    scen = _scenario_from_args(args)
    if not is_strongly_connected(scen.graph):
        raise TopologyError("graph is not strongly connected")
    inc = build_incidence(scen.graph)
    params = ModelParams(omega_u=scen.omega_u, incidence=inc, buffer_capacity=args.capacity)
    if args.controller == "none":
        law = ZeroLaw()
    else:
        law = ProportionalLaw(scen.config.k)
    t_end = args.t_end
    if t_end is None:
        gap = spectral_gap(laplacian(inc))
        t_end = 20.0 / (scen.config.k * gap)
    trace = simulate(params, law, t_end, dt=scen.dt, sample_stride=args.stride)
    out = _outdir(args)
    trace.write_csv(out / "trace.csv")
    trace.write_events(out / "events.json")
    print(f"wrote {out / 'trace.csv'} ({trace.sample_count} samples) and {out / 'events.json'}")
    return EXIT_OK


def cmd_center(args) -> int:
    scen = _scenario_from_args(args)
    if not is_strongly_connected(scen.graph):
        raise TopologyError("graph is not strongly connected")
    inc = build_incidence(scen.graph)
    params = ModelParams(omega_u=scen.omega_u, incidence=inc, buffer_capacity=args.capacity)
    tree = outward_spanning_tree(scen.graph, scen.root)
    schedule = scen.schedule or consistent_ordering(tree)
    if args.naive:
        targets = scen.naive_targets or tuple(reversed(schedule))
        trace, report = run_centering(
            scen.graph,
            tree,
            schedule,
            params,
            scen.config,
            dt=scen.dt,
            sample_stride=args.stride,
            targets=targets,
            enforce_order=False,
            allow_root_targets=True,
        )
    else:
        trace, report = run_centering(
            scen.graph, tree, schedule, params, scen.config, dt=scen.dt, sample_stride=args.stride
        )
    out = _outdir(args)
    trace.write_csv(out / "trace.csv")
    trace.write_events(out / "events.json")
    report.write_json(out / "report.json")
    summary = {
        "converged": report.converged,
        "max_final_beta": report.max_final_beta,
        "t1": report.t1,
        "phases": len(report.phases),
        "abort_reason": report.abort_reason,
    }
    _print_json(summary)
    if args.naive:
        return EXIT_OK
    if not report.converged:
        print(f"centering did not complete: {report.abort_reason}", file=sys.stderr)
        return EXIT_VERIFY
    if report.max_final_beta > 5 * scen.config.epsilon:
        print("final occupancies exceed the centering bound", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.self_test:
        detected, detail = self_test()
        print(detail)
        return EXIT_OK if detected else EXIT_VERIFY
    results = run_all(seeds=args.seeds, max_n=args.max_n)
    width = max(len(r.name) for r in results)
    failed = False
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  runs={r.runs:<4d} {status}  ({r.elapsed:.2f}s)")
        for msg in r.failures:
            failed = True
            print(f"    {msg}")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_oracle_compare(args) -> int:
    scen = _scenario_from_args(args)
    if args.controller == "center":
        outcome = centering_comparison(scenario=scen, dt=args.dt if args.dt != 0.01 else 0.5)
        deviation = outcome["deviation"]
    else:
        inc = build_incidence(scen.graph)
        params = ModelParams(omega_u=scen.omega_u, incidence=inc)
        law_f = ZeroLaw() if args.controller == "none" else ProportionalLaw(scen.config.k)
        law_o = ZeroLaw() if args.controller == "none" else ProportionalLaw(scen.config.k)
        t_end = args.t_end or 50.0
        capacity = args.capacity or 64
        offset = capacity // 2
        fluid = simulate(params, law_f, t_end, dt=scen.dt, sample_stride=args.stride)
        oracle = oracle_simulate(
            params, law_o, t_end, dt=scen.dt, sample_stride=args.stride, offset=offset, capacity=capacity
        )
        deviation = compare_fluid_oracle(fluid, oracle, offset)
    _print_json({"max_deviation_frames": deviation, "threshold": args.threshold})
    if deviation > args.threshold:
        print("deviation exceeds the threshold", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--graph", help="graph JSON file")
    parser.add_argument("--scenario", help="triangle | mesh | random | scenario JSON file")
    parser.add_argument("--root", type=int, default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n", type=int, default=None, help="node count for --scenario random")
    parser.add_argument("--delta", type=float, default=1e-4, help="frequency spread around 1")
    parser.add_argument("--k", type=float, default=None)
    parser.add_argument("--k2", type=float, default=None)
    parser.add_argument("--epsilon", type=float, default=None)
    parser.add_argument("--dt", type=float, default=0.01)
    parser.add_argument("--t-end", dest="t_end", type=float, default=None)
    parser.add_argument("--stride", type=int, default=100, help="sample every N steps")
    parser.add_argument("--capacity", type=float, default=None, help="buffer capacity in frames")
    parser.add_argument("--out", default=".", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bittide-sim",
        description="Simulate decentralized clock synchronization and elastic buffer centering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tree", help="print the spanning tree and a processing order")
    _add_common(p)
    p.add_argument("--order", help="comma-separated edge ids to validate")
    p.set_defaults(func=cmd_tree)

    p = sub.add_parser("steady-state", help="closed-form equilibrium of the proportional loop")
    _add_common(p)
    p.set_defaults(func=cmd_steady_state)

    p = sub.add_parser("simulate", help="run the fluid model and write a trace CSV")
    _add_common(p)
    p.add_argument("--controller", choices=("none", "proportional"), default="proportional")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("center", help="run the full buffer-centering pipeline")
    _add_common(p)
    p.add_argument("--naive", action="store_true", help="pulse edges in a deliberately bad order")
    p.set_defaults(func=cmd_center)

    p = sub.add_parser("verify", help="run the randomized property suites")
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--max-n", dest="max_n", type=int, default=12)
    p.add_argument("--self-test", dest="self_test", action="store_true",
                   help="inject a wrong-signed pulse and confirm the checks catch it")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("oracle-compare", help="frame-accurate vs fluid deviation")
    _add_common(p)
    p.add_argument("--controller", choices=("none", "proportional", "center"), default="center")
    p.add_argument("--threshold", type=float, default=2.0)
    p.set_defaults(func=cmd_oracle_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TopologyError, ScheduleError, SpectralError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericsError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

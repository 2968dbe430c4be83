"""Command-line interface.

Subcommands mirror the solver routes (solve, recursion, closedform,
glpp, aig), plus the cross-validation harness (validate) and the
structural checker (check-assumptions).  Exit codes: 0 success / all
comparisons pass, 1 a comparison failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import ancestry, glpp
from .closedform import smr_solve
from .dynamics import OdeConfig, check_field_assumptions, ode_solve
from .errors import RecodynError
from .labels import check_dual_assumptions
from .recursion import SiteOrdering, truncated_levels
from .scenario import Scenario, parse_scenario
from .typespace import TypeDistribution
from .validate import ALL_ROUTES, default_label_process, envelope_post_matrices, run_validate


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scenario", required=True, help="scenario JSON file")
    parser.add_argument("--t", type=float, default=None,
                        help="horizon override (defaults to the scenario's)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None, help="output file (default stdout)")
    parser.add_argument("--format", choices=("json", "csv"), default="json")
    parser.add_argument("--threads", type=int, default=1)


def _emit(args, text: str) -> None:
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_distribution(args, dist: TypeDistribution, extra: dict | None = None) -> None:
    if args.format == "csv":
        import io

        buf = io.StringIO()
        dist.to_csv(buf)
        _emit(args, buf.getvalue())
        return
    payload = {"t": args.t, "distribution": dist.to_json_dict()}
    payload.update(extra or {})
    _emit(args, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _load(args) -> tuple[Scenario, float]:
    scenario = parse_scenario(args.scenario)
    horizon = scenario.t if args.t is None else args.t
    args.t = horizon
    return scenario, horizon


def _cmd_solve(args) -> int:
    scenario, horizon = _load(args)
    cfg = OdeConfig(method=args.method)
    snaps = None
    if args.snapshots:
        snaps = np.linspace(0.0, horizon, args.snapshots + 1)
    sol = ode_solve(scenario.initial_distribution(), horizon, scenario.field(),
                    scenario.rates(), cfg, snapshots=snaps)
    if snaps is not None and args.format == "csv":
        lines = ["t," + ",".join(f"w{k}" for k in range(len(sol.final)))]
        for tv, row in zip(sol.times, sol.states):
            lines.append(f"{tv:.17g}," + ",".join(f"{x:.17g}" for x in row))
        lines.append(f"{horizon:.17g}," + ",".join(f"{x:.17g}" for x in sol.final.weights))
        _emit(args, "\n".join(lines) + "\n")
        return 0
    extra = {}
    if snaps is not None:
        extra["snapshots"] = [
            {"t": float(tv), "weights": [float(x) for x in row]}
            for tv, row in zip(sol.times, sol.states)
        ]
    _emit_distribution(args, sol.final, extra)
    return 0


def _cmd_recursion(args) -> int:
    scenario, horizon = _load(args)
    if args.ordering == "default":
        ordering = scenario.site_ordering()
    else:
        seq = tuple(int(x) for x in args.ordering.split(","))
        ordering = SiteOrdering(scenario.active_site, seq)
    level = scenario.n - 1 if args.level is None else args.level
    extra = {"level": level}
    if args.tol is not None:
        from .recursion import recursion_convergence

        out, est = recursion_convergence(
            scenario.initial_distribution(), horizon,
            field=scenario.active_field(), rates=scenario.rates(),
            ordering=ordering, tol=args.tol, levels=level)
        extra["error_estimate"] = est
    else:
        out = truncated_levels(
            scenario.initial_distribution(), horizon,
            field=scenario.active_field(), rates=scenario.rates(),
            ordering=ordering, grid=args.grid, levels=level)
        extra["grid"] = args.grid
    from .closedform import mutation_envelope

    off = scenario.off_active_u()
    if off and level == scenario.n - 1:
        # the envelope completes only the full-depth solution
        out = mutation_envelope(out, horizon, off,
                                {i: scenario.m0_at(i) for i in off},
                                {i: scenario.m1_at(i) for i in off})
    _emit_distribution(args, out, extra)
    return 0


def _cmd_closedform(args) -> int:
    scenario, horizon = _load(args)
    out = smr_solve(scenario.initial_distribution(), horizon, scenario, grid=args.grid)
    _emit_distribution(args, out, {"grid": args.grid})
    return 0


def _cmd_glpp(args) -> int:
    scenario, horizon = _load(args)
    process, off = default_label_process(scenario, args.labels)
    if args.log_events:
        rng = glpp.replicate_rng(args.seed, 0)
        state = glpp.simulate(None, horizon, scenario.rates(), process, rng,
                              log_events=True)
        with open(args.log_events, "w") as fh:
            glpp.write_event_log(fh, state)
    post = envelope_post_matrices(scenario, horizon) if off else None
    est = glpp.estimate(scenario.initial_distribution(), horizon, scenario.rates(),
                        process, args.replicates, args.seed, sitewise_post=post)
    _emit_distribution(args, est.mean, {
        "stderr": [float(x) for x in est.stderr],
        "replicates": est.replicates,
        "seed": est.seed,
        "labels": args.labels,
    })
    return 0


def _cmd_aig(args) -> int:
    scenario, horizon = _load(args)
    space = scenario.space()
    if args.export_dot:
        rng = glpp.replicate_rng(args.seed, 0)
        graph = ancestry.sample_graph(horizon, scenario.rates(), space, rng)
        with open(args.export_dot, "w") as fh:
            fh.write(graph.to_dot() + "\n")
        if not args.estimate:
            _emit(args, json.dumps({"exported": args.export_dot,
                                    "lines": len(graph.lines),
                                    "events": len(graph.events)}) + "\n")
            return 0
    from .closedform import ActiveSiteFlow

    act = space.active_site
    flow = ActiveSiteFlow(space, scenario.s, scenario.u_at(act),
                          scenario.m0_at(act), scenario.m1_at(act))
    off = scenario.off_active_u()
    est = ancestry.estimate(
        scenario.initial_distribution(), horizon, scenario.rates(), flow,
        args.replicates, args.seed, u=off,
        m0={i: scenario.m0_at(i) for i in off},
        m1={i: scenario.m1_at(i) for i in off})
    _emit_distribution(args, est.mean, {
        "stderr": [float(x) for x in est.stderr],
        "replicates": est.replicates,
        "seed": est.seed,
    })
    return 0


def _cmd_validate(args) -> int:
    scenario, horizon = _load(args)
    routes = ALL_ROUTES if args.routes == "all" else tuple(args.routes.split(","))
    report = run_validate(scenario, routes, seed=args.seed, t=horizon,
                          replicates=args.replicates, det_tol=args.det_tol,
                          mc_floor=args.mc_floor, grid=args.grid,
                          allow_envelope=not args.no_envelope,
                          threads=args.threads)
    _emit(args, report.to_json(include_timings=args.timings))
    return 0 if report.passed else 1


def _cmd_check_assumptions(args) -> int:
    scenario, horizon = _load(args)
    out = {"field": check_field_assumptions(
        scenario.field(), trials=args.trials, tol=args.tol,
        rng=np.random.default_rng(args.seed)).to_json_dict()}
    out["active_field"] = check_field_assumptions(
        scenario.active_field(), trials=args.trials, tol=args.tol,
        rng=np.random.default_rng(args.seed + 1)).to_json_dict()
    for kind in ("clock", "yule", "flags"):
        try:
            process, _ = default_label_process(scenario, kind)
        except RecodynError as exc:
            out[f"{kind}_dual"] = {"skipped": str(exc)}
            continue
        out[f"{kind}_dual"] = check_dual_assumptions(
            process, trials=args.trials, tol=max(args.tol, 1e-8),
            horizon=max(horizon, 0.1),
            rng=np.random.default_rng(args.seed + 2)).to_json_dict()
    _emit(args, json.dumps(out, sort_keys=True, indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recodyn",
        description="Recombination dynamics with selection and mutation: "
                    "deterministic solvers and genealogical Monte Carlo, "
                    "cross-validated.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="forward ODE integration")
    _common(p)
    p.add_argument("--method", choices=("rk4", "rk45"), default="rk4")
    p.add_argument("--snapshots", type=int, default=0,
                   help="also record this many equally spaced snapshots")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("recursion", help="iterated-integral recursion")
    _common(p)
    p.add_argument("--ordering", default="default",
                   help='comma-separated site list or "default"')
    p.add_argument("--grid", type=int, default=512)
    p.add_argument("--tol", type=float, default=None,
                   help="grid-double until below this estimate instead of --grid")
    p.add_argument("--level", type=int, default=None)
    p.set_defaults(func=_cmd_recursion)

    p = sub.add_parser("closedform", help="matrix-exponential route")
    _common(p)
    p.add_argument("--grid", type=int, default=512)
    p.set_defaults(func=_cmd_closedform)

    p = sub.add_parser("glpp", help="labelled-partition Monte Carlo")
    _common(p)
    p.add_argument("--replicates", type=int, default=10 ** 5)
    p.add_argument("--labels", choices=("clock", "yule", "flags"), default="clock")
    p.add_argument("--log-events", default=None,
                   help="write one simulated path's events as JSON lines")
    p.set_defaults(func=_cmd_glpp)

    p = sub.add_parser("aig", help="ancestry-graph Monte Carlo")
    _common(p)
    p.add_argument("--replicates", type=int, default=10 ** 5)
    p.add_argument("--export-dot", default=None,
                   help="write one sampled graph in DOT format")
    p.add_argument("--estimate", action="store_true",
                   help="run the estimator even when exporting a graph")
    p.set_defaults(func=_cmd_aig)

    p = sub.add_parser("validate", help="run routes and compare pairwise")
    _common(p)
    p.add_argument("--routes", default="all",
                   help="comma-separated subset of " + ",".join(ALL_ROUTES))
    p.add_argument("--replicates", type=int, default=10 ** 5)
    p.add_argument("--det-tol", type=float, default=1e-5)
    p.add_argument("--mc-floor", type=float, default=0.01)
    p.add_argument("--grid", type=int, default=512)
    p.add_argument("--no-envelope", action="store_true",
                   help="forbid the off-active mutation envelope decomposition")
    p.add_argument("--timings", action="store_true",
                   help="include per-route runtimes (breaks byte-identity)")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("check-assumptions", help="structural hypothesis defects")
    _common(p)
    p.add_argument("--trials", type=int, default=64)
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=_cmd_check_assumptions)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RecodynError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

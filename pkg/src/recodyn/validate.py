"""Cross-validation harness: run several solver routes, compare pairwise.

Deterministic routes must agree to a fixed total-variation tolerance;
Monte Carlo routes get a tolerance of max(floor, three times their worst
coordinate standard error), combining errors when both sides are Monte
Carlo.  Routes whose preconditions fail are reported as skipped, not as
failures.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import ancestry, glpp
from .closedform import ActiveSiteFlow, envelope_site_matrix, mutation_envelope, smr_solve
from .dynamics import DriftFlow, OdeConfig, check_field_assumptions, ode_solve
from .errors import InvalidArgument, RecodynError
from .labels import ClockLabels, MutationFlags, YuleLabels, check_dual_assumptions
from .recursion import truncated_levels
from .scenario import Scenario
from .typespace import TypeDistribution, tv_distance

ALL_ROUTES = ("ode", "recursion", "closedform", "glpp", "aig")
DETERMINISTIC_TOL = 1e-5
MC_FLOOR = 0.01


@dataclass
class RouteResult:
    name: str
    status: str                      # "ok" | "skipped" | "error"
    distribution: TypeDistribution | None = None
    stderr: np.ndarray | None = None
    note: str = ""
    seconds: float = 0.0

    @property
    def is_mc(self) -> bool:
        return self.stderr is not None


@dataclass
class PairComparison:
    a: str
    b: str
    tv: float
    tolerance: float
    passed: bool
    kind: str                        # "deterministic" | "mc"


@dataclass
class ValidationReport:
    scenario: Scenario
    t: float
    seed: int
    routes: dict[str, RouteResult]
    comparisons: list[PairComparison]
    assumptions: dict[str, dict] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.comparisons)

    def to_json_dict(self, include_timings: bool = False) -> dict:
        routes = {}
        for name, r in self.routes.items():
            entry = {"status": r.status, "note": r.note}
            if r.distribution is not None:
                entry["distribution"] = r.distribution.to_json_dict()
            if r.stderr is not None:
                entry["stderr"] = [float(x) for x in r.stderr]
            if include_timings:
                entry["seconds"] = r.seconds
            routes[name] = entry
        return {
            "scenario": self.scenario.to_json_dict(),
            "t": self.t,
            "seed": self.seed,
            "routes": routes,
            "comparisons": [
                {"a": c.a, "b": c.b, "tv": c.tv, "tolerance": c.tolerance,
                 "passed": c.passed, "kind": c.kind}
                for c in self.comparisons
            ],
            "assumptions": self.assumptions,
            "passed": self.passed,
        }

    def to_json(self, include_timings: bool = False) -> str:
        return json.dumps(self.to_json_dict(include_timings), sort_keys=True,
                          indent=2) + "\n"


def default_label_process(scenario: Scenario, kind: str):
    """Build the label process a scenario supports for the given kind,
    plus the per-site matrices needed to finish the job afterwards."""
    space = scenario.space()
    act = space.active_site
    if kind == "clock":
        flow = ActiveSiteFlow(space, scenario.s, scenario.u_at(act),
                              scenario.m0_at(act), scenario.m1_at(act))
        return ClockLabels(flow), scenario.off_active_u()
    if kind == "yule":
        if any(x > 0 for x in scenario.u):
            raise InvalidArgument(
                "counting labels only describe pure selection; mutation present")
        return YuleLabels(space, scenario.s), {}
    if kind == "flags":
        if scenario.s > 0:
            raise InvalidArgument(
                "mutation-flag labels do not describe selection; s > 0")
        return MutationFlags(space, scenario.u, scenario.m0, scenario.m1), {}
    raise InvalidArgument(f"unknown label kind {kind!r}")


def envelope_post_matrices(scenario: Scenario, t: float) -> dict[int, np.ndarray]:
    return {i: envelope_site_matrix(t, rate, scenario.m0_at(i), scenario.m1_at(i))
            for i, rate in scenario.off_active_u().items()}


def _route_ode(scenario: Scenario, t: float, **_):
    sol = ode_solve(scenario.initial_distribution(), t, scenario.field(),
                    scenario.rates())
    return RouteResult("ode", "ok", sol.final)


def _route_closedform(scenario: Scenario, t: float, *, grid: int, **_):
    if not scenario.rates().is_single_crossover:
        return RouteResult("closedform", "skipped",
                           note="requires single-crossover rates")
    out = smr_solve(scenario.initial_distribution(), t, scenario, grid=grid)
    return RouteResult("closedform", "ok", out)


def _route_recursion(scenario: Scenario, t: float, *, grid: int,
                     allow_envelope: bool, **_):
    if not scenario.rates().is_single_crossover:
        return RouteResult("recursion", "skipped",
                           note="requires single-crossover rates")
    field_full = scenario.field()
    off = scenario.off_active_u()
    if off and not allow_envelope:
        return RouteResult(
            "recursion", "skipped",
            note="drift touches non-active sites, violating the structural "
                 "hypotheses of the recursion; rerun with the mutation "
                 "envelope enabled or force with an override")
    base_field = scenario.active_field() if off else field_full
    bullet = truncated_levels(
        scenario.initial_distribution(), t, field=base_field,
        rates=scenario.rates(), ordering=scenario.site_ordering(), grid=grid,
        base_flow=DriftFlow(base_field))
    if off:
        bullet = mutation_envelope(
            bullet, t, off, {i: scenario.m0_at(i) for i in off},
            {i: scenario.m1_at(i) for i in off})
    return RouteResult("recursion", "ok", bullet)


def _route_glpp(scenario: Scenario, t: float, *, seed: int, replicates: int, **_):
    process, off = default_label_process(scenario, "clock")
    post = envelope_post_matrices(scenario, t) if off else None
    est = glpp.estimate(scenario.initial_distribution(), t, scenario.rates(),
                        process, replicates, seed, sitewise_post=post)
    return RouteResult("glpp", "ok", est.mean, est.stderr)


def _route_aig(scenario: Scenario, t: float, *, seed: int, replicates: int, **_):
    space = scenario.space()
    act = space.active_site
    flow = ActiveSiteFlow(space, scenario.s, scenario.u_at(act),
                          scenario.m0_at(act), scenario.m1_at(act))
    off = scenario.off_active_u()
    est = ancestry.estimate(
        scenario.initial_distribution(), t, scenario.rates(), flow, replicates,
        seed, u=off, m0={i: scenario.m0_at(i) for i in off},
        m1={i: scenario.m1_at(i) for i in off})
    return RouteResult("aig", "ok", est.mean, est.stderr)


_ROUTE_RUNNERS = {
    "ode": _route_ode,
    "recursion": _route_recursion,
    "closedform": _route_closedform,
    "glpp": _route_glpp,
    "aig": _route_aig,
}


def _mc_tolerance(a: RouteResult, b: RouteResult, floor: float) -> float:
    if a.is_mc and b.is_mc:
        worst = float(np.sqrt(a.stderr ** 2 + b.stderr ** 2).max())
    else:
        mc = a if a.is_mc else b
        worst = float(mc.stderr.max())
    return max(floor, 3.0 * worst)


def run_validate(scenario: Scenario, routes=ALL_ROUTES, seed: int = 0, *,
                 t: float | None = None, replicates: int = 10 ** 5,
                 det_tol: float = DETERMINISTIC_TOL, mc_floor: float = MC_FLOOR,
                 grid: int = 512, allow_envelope: bool = True,
                 threads: int = 1) -> ValidationReport:
    """Run the requested routes on one scenario and compare them pairwise."""
    routes = tuple(routes)
    unknown = set(routes) - set(ALL_ROUTES)
    if unknown:
        raise InvalidArgument(f"unknown routes {sorted(unknown)}")
    horizon = scenario.t if t is None else float(t)

    def run_one(name: str) -> RouteResult:
        start = time.perf_counter()
        try:
            result = _ROUTE_RUNNERS[name](
                scenario, horizon, seed=seed, replicates=replicates, grid=grid,
                allow_envelope=allow_envelope)
        except RecodynError as exc:
            result = RouteResult(name, "skipped", note=f"{type(exc).__name__}: {exc}")
        result.seconds = time.perf_counter() - start
        return result

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_one, routes))
    else:
        results = [run_one(name) for name in routes]
    by_name = {r.name: r for r in results}

    comparisons = []
    ok = [r for r in results if r.status == "ok"]
    for i, a in enumerate(ok):
        for b in ok[i + 1:]:
            tv = tv_distance(a.distribution, b.distribution)
            if a.is_mc or b.is_mc:
                tol = _mc_tolerance(a, b, mc_floor)
                kind = "mc"
            else:
                tol = det_tol
                kind = "deterministic"
            comparisons.append(PairComparison(a.name, b.name, tv, tol, tv <= tol, kind))

    assumptions = {}
    why = check_field_assumptions(scenario.field(), trials=32, tol=1e-10,
                                  rng=np.random.default_rng(0xA55E55))
    assumptions["field"] = why.to_json_dict()
    active = check_field_assumptions(scenario.active_field(), trials=32, tol=1e-10,
                                     rng=np.random.default_rng(0xA55E56))
    assumptions["active_field"] = active.to_json_dict()
    clock, _ = default_label_process(scenario, "clock")
    assumptions["clock_dual"] = check_dual_assumptions(
        clock, trials=16, tol=1e-8, horizon=max(horizon, 0.1),
        rng=np.random.default_rng(0xA55E57)).to_json_dict()

    return ValidationReport(scenario, horizon, seed, by_name, comparisons,
                            assumptions)

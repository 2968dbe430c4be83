"""Scenario files: one JSON object configuring a full model run.

A scenario fixes the sites and alphabets, the active site, selection and
mutation parameters, recombination rates, the initial distribution, the
horizon, and the site ordering used by the recursion.  Parsing validates
everything eagerly and reports failures with a JSON-pointer path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

import numpy as np

from .dynamics import SelectionMutationField
from .errors import ParseError, RecodynError
from .partitions import Partition, RecombinationRates
from .recursion import SiteOrdering
from .typespace import TypeDistribution, TypeSpace


@dataclass(frozen=True)
class Scenario:
    n: int
    alphabet_sizes: tuple[int, ...]
    active_site: int
    s: float
    u: tuple[float, ...]
    m0: tuple[float, ...]
    m1: tuple[float, ...]
    recombination: RecombinationRates
    initial_spec: Any
    t: float
    ordering_spec: Any = "default"

    def space(self) -> TypeSpace:
        return TypeSpace(self.n, self.alphabet_sizes, self.active_site)

    def field(self) -> SelectionMutationField:
        return SelectionMutationField(
            self.space(), s=self.s, u=self.u, m0=self.m0, m1=self.m1,
            selection=True, mutation_sites=self.space().sites)

    def active_field(self) -> SelectionMutationField:
        return self.field().active_part()

    def u_at(self, i: int) -> float:
        return self.u[i - 1]

    def m0_at(self, i: int) -> float:
        return self.m0[i - 1]

    def m1_at(self, i: int) -> float:
        return self.m1[i - 1]

    def off_active_u(self) -> dict[int, float]:
        return {i: self.u[i - 1] for i in self.space().sites
                if i != self.active_site and self.u[i - 1] > 0}

    def rates(self) -> RecombinationRates:
        return self.recombination

    def site_ordering(self) -> SiteOrdering:
        if self.ordering_spec == "default":
            return SiteOrdering.default(self.n, self.active_site)
        return SiteOrdering(self.active_site, tuple(self.ordering_spec))

    def initial_distribution(self) -> TypeDistribution:
        return _build_initial(self.space(), self.initial_spec, "/initial")

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "alphabet_sizes": list(self.alphabet_sizes),
            "active_site": self.active_site,
            "selection": {"s": self.s},
            "mutation": {"u": list(self.u), "m0": list(self.m0), "m1": list(self.m1)},
            "recombination": self.recombination.to_json_dict(),
            "initial": self.initial_spec,
            "t": self.t,
            "ordering": self.ordering_spec if self.ordering_spec == "default"
            else list(self.ordering_spec),
        }


def _want(d: dict, key: str, pointer: str):
    if key not in d:
        raise ParseError(f"{pointer}/{key}", "missing required field")
    return d[key]


def _as_number(x, pointer: str, lo=None) -> float:
    if not isinstance(x, (int, float)) or isinstance(x, bool):
        raise ParseError(pointer, f"expected a number, got {type(x).__name__}")
    if lo is not None and x < lo:
        raise ParseError(pointer, f"must be >= {lo}")
    return float(x)


def _as_int(x, pointer: str, lo=None) -> int:
    if not isinstance(x, int) or isinstance(x, bool):
        raise ParseError(pointer, f"expected an integer, got {type(x).__name__}")
    if lo is not None and x < lo:
        raise ParseError(pointer, f"must be >= {lo}")
    return x


def _site_list(x, n, pointer: str, default: float) -> list[float]:
    if x is None:
        return [default] * n
    if not isinstance(x, list) or len(x) != n:
        raise ParseError(pointer, f"expected a list of {n} numbers")
    return [_as_number(v, f"{pointer}/{i}") for i, v in enumerate(x)]


def _build_initial(space: TypeSpace, spec, pointer: str) -> TypeDistribution:
    if isinstance(spec, str):
        if spec == "uniform":
            return TypeDistribution.uniform(space)
        if spec.startswith("delta:"):
            body = spec[len("delta:"):]
            try:
                letters = tuple(int(v) for v in body.split(","))
            except ValueError:
                raise ParseError(pointer, f"bad point-mass tuple {body!r}") from None
            if len(letters) != space.n:
                raise ParseError(pointer, f"point mass needs {space.n} letters")
            return TypeDistribution.point_mass(space, letters)
        raise ParseError(pointer, f"unknown named initial {spec!r}")
    if isinstance(spec, dict):
        if "dense" in spec:
            try:
                return TypeDistribution(space, space.sites, spec["dense"])
            except RecodynError as exc:
                raise ParseError(f"{pointer}/dense", str(exc)) from None
        if "product" in spec:
            margs = spec["product"]
            if not isinstance(margs, list) or len(margs) != space.n:
                raise ParseError(f"{pointer}/product",
                                 f"expected {space.n} per-site marginals")
            try:
                return TypeDistribution.product_of_marginals(space, margs)
            except RecodynError as exc:
                raise ParseError(f"{pointer}/product", str(exc)) from None
        if "mixture" in spec:
            parts = spec["mixture"]
            if not isinstance(parts, list) or not parts:
                raise ParseError(f"{pointer}/mixture", "expected a nonempty list")
            acc = np.zeros(space.size)
            total = 0.0
            for k, item in enumerate(parts):
                here = f"{pointer}/mixture/{k}"
                w = _as_number(_want(item, "weight", here), f"{here}/weight", lo=0.0)
                comp = _build_initial(space, _want(item, "initial", here),
                                      f"{here}/initial")
                acc += w * comp.weights
                total += w
            if abs(total - 1.0) > 1e-12:
                raise ParseError(f"{pointer}/mixture", f"weights sum to {total}, not 1")
            return TypeDistribution(space, space.sites, acc)
    raise ParseError(pointer, "unrecognised initial distribution specification")


def scenario_from_dict(d: dict) -> Scenario:
    if not isinstance(d, dict):
        raise ParseError("", "scenario must be a JSON object")
    n = _as_int(_want(d, "n", ""), "/n", lo=1)
    sizes = d.get("alphabet_sizes")
    if sizes is None:
        sizes = [2] * n
    if not isinstance(sizes, list) or len(sizes) != n:
        raise ParseError("/alphabet_sizes", f"expected a list of {n} integers")
    sizes = [_as_int(v, f"/alphabet_sizes/{i}", lo=2) for i, v in enumerate(sizes)]
    active = _as_int(_want(d, "active_site", ""), "/active_site", lo=1)
    if active > n:
        raise ParseError("/active_site", f"must be <= n = {n}")

    sel = d.get("selection") or {}
    s = _as_number(sel.get("s", 0.0), "/selection/s", lo=0.0)

    mut = d.get("mutation") or {}
    u = _site_list(mut.get("u"), n, "/mutation/u", 0.0)
    m0 = _site_list(mut.get("m0"), n, "/mutation/m0", 0.5)
    m1 = _site_list(mut.get("m1"), n, "/mutation/m1", 0.5)
    for i in range(n):
        if u[i] < 0:
            raise ParseError(f"/mutation/u/{i}", "must be >= 0")
        if abs(m0[i] + m1[i] - 1.0) > 1e-12:
            raise ParseError(f"/mutation/m0/{i}", f"m0+m1 = {m0[i] + m1[i]}, not 1")

    reco = _want(d, "recombination", "")
    mode = _want(reco, "mode", "/recombination")
    if mode == "single_crossover":
        rates_raw = _want(reco, "rates", "/recombination")
        if not isinstance(rates_raw, list) or len(rates_raw) != n - 1:
            raise ParseError("/recombination/rates",
                             f"expected {n - 1} rates for single crossover")
        vals = [_as_number(v, f"/recombination/rates/{i}", lo=0.0)
                for i, v in enumerate(rates_raw)]
        rates = RecombinationRates.single_crossover_list(n, active, vals)
    elif mode == "general":
        rates_raw = _want(reco, "rates", "/recombination")
        if not isinstance(rates_raw, list):
            raise ParseError("/recombination/rates", "expected a list of entries")
        table = {}
        for k, item in enumerate(rates_raw):
            here = f"/recombination/rates/{k}"
            rgs = _want(item, "partition", here)
            try:
                part = Partition.from_json(rgs)
            except RecodynError as exc:
                raise ParseError(f"{here}/partition", str(exc)) from None
            if part.n != n:
                raise ParseError(f"{here}/partition", f"partition of {part.n} sites, not {n}")
            table[part] = _as_number(_want(item, "rate", here), f"{here}/rate", lo=0.0)
        rates = RecombinationRates.from_partition_map(n, active, table)
    else:
        raise ParseError("/recombination/mode", f"unknown mode {mode!r}")

    t = _as_number(_want(d, "t", ""), "/t", lo=0.0)
    ordering = d.get("ordering", "default")
    if ordering != "default":
        if not isinstance(ordering, list):
            raise ParseError("/ordering", "expected \"default\" or a site list")
        ordering = tuple(_as_int(v, f"/ordering/{i}", lo=1)
                         for i, v in enumerate(ordering))

    scen = Scenario(n, tuple(sizes), active, s, tuple(u), tuple(m0), tuple(m1),
                    rates, _want(d, "initial", ""), t, ordering)
    # force eager validation of the derived objects
    try:
        scen.initial_distribution()
    except ParseError:
        raise
    except RecodynError as exc:
        raise ParseError("/initial", str(exc)) from None
    try:
        scen.site_ordering()
    except RecodynError as exc:
        raise ParseError("/ordering", str(exc)) from None
    if s > 0 and sizes[active - 1] != 2:
        raise ParseError("/selection/s", "selection needs a binary active site")
    if any(u[i] > 0 and sizes[i] != 2 for i in range(n)):
        raise ParseError("/mutation/u", "mutation needs binary sites")
    return scen


def parse_scenario(path: str) -> Scenario:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ParseError("", f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError("", f"invalid JSON: {exc}") from None
    return scenario_from_dict(raw)

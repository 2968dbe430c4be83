"""Vector fields (selection, mutation) and the forward nonlinear ODE.

The full dynamics combines a selection/mutation drift with recombination
terms, one per rated partition, each pulling the state towards the
product of its block marginals.  The default integrator is fixed-step
classical Runge-Kutta with per-step renormalisation; an adaptive
Runge-Kutta-Fehlberg path is available through scipy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .checks import AssumptionReport, map_assumption_report
from .closedform import selection_projector, site_mutation_operator
from .errors import InvalidArgument, StiffnessError, Unsupported
from .partitions import RecombinationRates
from .typespace import (
    SignedMeasure,
    TypeDistribution,
    TypeSpace,
    marginal_weights,
    product_weights,
)

MUTATION_SELECTORS = ("none", "all", "active_only", "nonactive_only")


@dataclass(frozen=True)
class SelectionMutationField:
    """Drift acting through the active site (selection) plus independent
    per-site mutation.

    ``mutation_sites`` controls which sites mutate; restricting it to the
    active site yields the head-local field whose flow has a closed form.
    """

    space: TypeSpace
    s: float = 0.0
    u: tuple[float, ...] = ()
    m0: tuple[float, ...] = ()
    m1: tuple[float, ...] = ()
    selection: bool = True
    mutation_sites: tuple[int, ...] = ()

    def __post_init__(self):
        n = self.space.n
        u = tuple(float(x) for x in (self.u or (0.0,) * n))
        m0 = tuple(float(x) for x in (self.m0 or (0.5,) * n))
        m1 = tuple(float(x) for x in (self.m1 or (0.5,) * n))
        if not len(u) == len(m0) == len(m1) == n:
            raise InvalidArgument("per-site mutation parameters must have length n")
        if self.s < 0 or any(x < 0 for x in u):
            raise InvalidArgument("rates must be nonnegative")
        for i in range(n):
            if abs(m0[i] + m1[i] - 1.0) > 1e-12:
                raise InvalidArgument(f"m0+m1 != 1 at site {i + 1}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "m1", m1)
        sites = tuple(sorted(set(self.mutation_sites)))
        if any(not 1 <= i <= n for i in sites):
            raise InvalidArgument("mutation site outside 1..n")
        object.__setattr__(self, "mutation_sites", sites)
        if self.selection and self.s > 0 and self.space.site_size(self.space.active_site) != 2:
            raise Unsupported("selection requires a binary active site")
        ops = {}
        for i in sites:
            if u[i - 1] > 0:
                ops[i] = site_mutation_operator(self.space, i, m0[i - 1], m1[i - 1])
        object.__setattr__(self, "_mut_ops", ops)
        object.__setattr__(
            self, "_sel_op",
            selection_projector(self.space) if self.selection and self.s > 0 else None)

    # -- constructors -------------------------------------------------

    @classmethod
    def zero(cls, space: TypeSpace) -> "SelectionMutationField":
        return cls(space, s=0.0, selection=False)

    @classmethod
    def selection_only(cls, space: TypeSpace, s: float) -> "SelectionMutationField":
        return cls(space, s=s, selection=True)

    @classmethod
    def mutation_only(cls, space: TypeSpace, u, m0, m1,
                      which: str = "all") -> "SelectionMutationField":
        return cls(space, s=0.0, u=tuple(u), m0=tuple(m0), m1=tuple(m1),
                   selection=False, mutation_sites=_select_sites(space, which))

    @classmethod
    def smr(cls, space: TypeSpace, s: float, u, m0, m1) -> "SelectionMutationField":
        return cls(space, s=s, u=tuple(u), m0=tuple(m0), m1=tuple(m1),
                   selection=True, mutation_sites=space.sites)

    def active_part(self) -> "SelectionMutationField":
        """Selection plus mutation restricted to the active site."""
        keep = tuple(i for i in self.mutation_sites if i == self.space.active_site)
        return SelectionMutationField(self.space, self.s, self.u, self.m0, self.m1,
                                      self.selection, keep)

    def off_active_rates(self) -> dict[int, float]:
        return {i: self.u[i - 1] for i in self.mutation_sites
                if i != self.space.active_site and self.u[i - 1] > 0}

    # -- structure ----------------------------------------------------

    @property
    def is_active_local(self) -> bool:
        """True when the drift only touches the active site, which is the
        hypothesis of the recursion and duality routes."""
        return all(self.u[i - 1] == 0.0 or i == self.space.active_site
                   for i in self.mutation_sites)

    @property
    def rate_scale(self) -> float:
        s = self.s if self.selection else 0.0
        umax = max((self.u[i - 1] for i in self.mutation_sites), default=0.0)
        return s + umax

    # -- evaluation ----------------------------------------------------

    def apply_weights(self, w: np.ndarray) -> np.ndarray:
        out = np.zeros_like(w)
        if self._sel_op is not None:
            fw = self._sel_op.apply(w)
            out += self.s * (fw - fw.sum() * w)
        for i, op in self._mut_ops.items():
            out += self.u[i - 1] * (op.apply(w) - w)
        return out

    def apply(self, nu: TypeDistribution) -> SignedMeasure:
        if nu.sites != self.space.sites:
            raise InvalidArgument("field acts on full-support distributions")
        return SignedMeasure(self.space, nu.sites, self.apply_weights(nu.weights))


def _select_sites(space: TypeSpace, which: str) -> tuple[int, ...]:
    if which not in MUTATION_SELECTORS:
        raise InvalidArgument(f"unknown mutation selector {which!r}")
    if which == "none":
        return ()
    if which == "all":
        return space.sites
    if which == "active_only":
        return (space.active_site,)
    return tuple(i for i in space.sites if i != space.active_site)


def selection_field_apply(nu: TypeDistribution, s: float) -> SignedMeasure:
    """Selection drift alone: the fit share grows logistically while the
    conditional distributions are transported."""
    f = SelectionMutationField(nu.space, s=s, selection=True)
    return f.apply(nu)


def mutation_field_apply(nu: TypeDistribution, u, m0, m1,
                         which: str = "all") -> SignedMeasure:
    f = SelectionMutationField.mutation_only(nu.space, u, m0, m1, which)
    return f.apply(nu)


def recombination_weights(space: TypeSpace, w: np.ndarray,
                          pairs: Sequence[tuple]) -> np.ndarray:
    """sum over rated partitions of rate * (product of block marginals - w)."""
    out = np.zeros_like(w)
    for part, rate in pairs:
        factors = [(b, marginal_weights(space, space.sites, w, b)) for b in part.blocks()]
        _, pw = product_weights(space, factors)
        out += rate * (pw - w)
    return out


def rhs_eval(nu: TypeDistribution, field: SelectionMutationField,
             rates: RecombinationRates) -> SignedMeasure:
    """Right-hand side of the full dynamics at ``nu``."""
    w = field.apply_weights(nu.weights)
    w += recombination_weights(nu.space, nu.weights, rates.partition_rates())
    return SignedMeasure(nu.space, nu.sites, w)


@dataclass(frozen=True)
class OdeConfig:
    method: str = "rk4"          # "rk4" fixed step or "rk45" adaptive
    step: float | None = None    # None picks min(0.01, 0.1 / rate scale)
    rtol: float = 1e-10
    atol: float = 1e-12
    renormalize: bool = True

    def __post_init__(self):
        if self.method not in ("rk4", "rk45"):
            raise InvalidArgument(f"unknown method {self.method!r}")
        if self.step is not None and self.step <= 0:
            raise InvalidArgument("step must be positive")
        if self.rtol <= 0 or self.atol <= 0:
            raise InvalidArgument("tolerances must be positive")


@dataclass
class OdeSolution:
    final: TypeDistribution
    times: np.ndarray
    states: np.ndarray           # one weight row per requested time
    renormalizations: int = 0


def default_step(field: SelectionMutationField, rates: RecombinationRates) -> float:
    scale = field.rate_scale + rates.total_rate()
    if scale <= 0:
        return 0.01
    return min(0.01, 0.1 / scale)


def _rk4_segment(w, rhs, t0, t1, h, renormalize):
    """March from t0 to t1 with uniform substeps of at most h."""
    renorms = 0
    span = t1 - t0
    if span <= 0:
        return w, renorms
    steps = max(1, math.ceil(span / h))
    dt = span / steps
    for _ in range(steps):
        k1 = rhs(w)
        k2 = rhs(w + 0.5 * dt * k1)
        k3 = rhs(w + 0.5 * dt * k2)
        k4 = rhs(w + dt * k3)
        w = w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        lo = w.min()
        if lo < -1e-10:
            raise StiffnessError(f"weight {lo} fell below -1e-10; reduce the step")
        if lo < 0.0:
            w = np.clip(w, 0.0, None)
        mass = w.sum()
        if renormalize and mass != 1.0:
            if abs(mass - 1.0) > 1e-12:
                renorms += 1
            w = w / mass
    return w, renorms


def ode_solve(omega0: TypeDistribution, t: float, field: SelectionMutationField,
              rates: RecombinationRates, cfg: OdeConfig | None = None,
              snapshots: Sequence[float] | None = None) -> OdeSolution:
    """Integrate the full dynamics from ``omega0`` over [0, t].

    ``snapshots`` requests intermediate states at exact times (they are
    landed on, not interpolated, in the fixed-step path).
    """
    if t < 0:
        raise InvalidArgument("nonnegative horizon only")
    cfg = cfg or OdeConfig()
    space = omega0.space
    if omega0.sites != space.sites:
        raise InvalidArgument("initial condition must cover all sites")
    pairs = rates.partition_rates()

    def rhs(w: np.ndarray) -> np.ndarray:
        return field.apply_weights(w) + recombination_weights(space, w, pairs)

    snap_list = [] if snapshots is None else [float(x) for x in snapshots]
    snaps = np.asarray(sorted(set(snap_list)), dtype=float)
    if snaps.size and (snaps[0] < 0 or snaps[-1] > t):
        raise InvalidArgument("snapshots must lie in [0, t]")

    if cfg.method == "rk45":
        return _solve_rk45(omega0, t, rhs, cfg, snaps)

    h = cfg.step if cfg.step is not None else default_step(field, rates)
    w = omega0.weights.copy()
    renorms = 0
    rows = np.empty((snaps.size, len(w)))
    prev = 0.0
    for k, ts in enumerate(snaps):
        w, r = _rk4_segment(w, rhs, prev, ts, h, cfg.renormalize)
        renorms += r
        rows[k] = w
        prev = ts
    w, r = _rk4_segment(w, rhs, prev, t, h, cfg.renormalize)
    renorms += r
    final = TypeDistribution.from_raw(space, space.sites, w, neg_tol=1e-10, mass_tol=1e-9)
    return OdeSolution(final, snaps, rows, renorms)


def _solve_rk45(omega0, t, rhs, cfg, snaps):
    from scipy.integrate import solve_ivp

    space = omega0.space
    t_eval = np.unique(np.concatenate([snaps, [t]])) if t > 0 else np.array([0.0])
    sol = solve_ivp(lambda _, w: rhs(w), (0.0, t), omega0.weights, method="RK45",
                    rtol=cfg.rtol, atol=cfg.atol, t_eval=t_eval, max_step=np.inf)
    if not sol.success:
        raise StiffnessError(f"adaptive integrator failed: {sol.message}")
    states = sol.y.T
    rows = states[:-1] if snaps.size else np.empty((0, len(omega0)))
    w = states[-1]
    if w.min() < -1e-10:
        raise StiffnessError(f"weight {w.min()} fell below -1e-10")
    w = np.clip(w, 0.0, None)
    w = w / w.sum()
    final = TypeDistribution.from_raw(space, space.sites, w, neg_tol=1e-10, mass_tol=1e-9)
    return OdeSolution(final, snaps, rows, 0)


class DriftFlow:
    """Flow of the drift alone, evaluated by ODE integration.

    Slower than the matrix-exponential flow but independent of it, which
    is what the cross-validation wants from a second base flow.
    """

    def __init__(self, field: SelectionMutationField, cfg: OdeConfig | None = None):
        self.field = field
        self.space = field.space
        self.cfg = cfg or OdeConfig()
        self._no_rates = RecombinationRates.from_partition_map(
            field.space.n, field.space.active_site, {})

    def evaluate(self, nu: TypeDistribution, t: float) -> TypeDistribution:
        return ode_solve(nu, t, self.field, self._no_rates, self.cfg).final

    def batch(self, nu: TypeDistribution, ts: np.ndarray) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        uniq = np.unique(ts)
        horizon = float(uniq[-1]) if uniq.size else 0.0
        sol = ode_solve(nu, horizon, self.field, self._no_rates, self.cfg,
                        snapshots=uniq)
        lookup = {float(t): row for t, row in zip(sol.times, sol.states)}
        rows = np.stack([lookup[float(t)] for t in ts.reshape(-1)])
        return rows.reshape(ts.shape + (len(nu),))


def check_field_assumptions(field: SelectionMutationField, trials: int = 64,
                            tol: float = 1e-10,
                            rng: np.random.Generator | None = None) -> AssumptionReport:
    """Measure how far the field is from satisfying the head-locality and
    conditional-linearity hypotheses (zero for active-local fields)."""
    rng = rng or np.random.default_rng(0)
    return map_assumption_report(
        lambda nu: field.apply_weights(nu.weights), field.space, trials, tol, rng)


def logistic_fit_share(f0: float, s: float, t) -> np.ndarray | float:
    """Fit-share trajectory of pure selection, the scalar closed form."""
    g = f0 * np.exp(s * np.asarray(t, dtype=float))
    return g / (1.0 - f0 + g)

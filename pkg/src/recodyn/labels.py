"""Backward-time label processes and their dual maps.

A label describes the ancestry of one genome block.  Its dual map turns
the ancestral type distribution into the distribution of the block
today; the distinguished empty label leaves it untouched.  Three
concrete labels are provided: a deterministic clock read through the
drift flow, a pure-birth line counter (selection), and per-site mutation
flags.  Site processes add the single-crossover initiation/resetting
mechanism around any label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checks import AssumptionReport, mixture_defect_sample, split_defect_sample
from .errors import InvalidArgument, LabelOverflow
from .partitions import DELTA
from .typespace import (
    TypeDistribution,
    TypeSpace,
    condition_on_active,
    product_weights,
)

YULE_CAP = 10 ** 6


class LabelProcess:
    """Interface shared by all label processes.

    ``step`` simulates the label forward by a duration (exactly, with no
    time discretisation); ``dual_h`` maps a type distribution through the
    label.  ``dual_h(nu, empty())`` is ``nu`` for every process.
    """

    space: TypeSpace

    def empty(self):
        raise NotImplementedError

    def step(self, state, dt: float, rng: np.random.Generator):
        raise NotImplementedError

    def dual_h(self, nu: TypeDistribution, state) -> TypeDistribution:
        raise NotImplementedError

    def batch_dual(self, nu: TypeDistribution, states) -> np.ndarray:
        """Dual weights for many states, one row each (loop fallback)."""
        out = np.empty((len(states), len(nu)))
        for k, y in enumerate(states):
            out[k] = self.dual_h(nu, y).weights
        return out

    def random_state(self, rng: np.random.Generator, horizon: float):
        return self.step(self.empty(), rng.uniform(0.0, horizon), rng)

    def state_to_json(self, state) -> dict:
        raise NotImplementedError

    def state_from_json(self, data: dict):
        raise NotImplementedError


class ClockLabels(LabelProcess):
    """Deterministic elapsed-time label read through a drift flow."""

    def __init__(self, flow):
        self.flow = flow
        self.space = flow.space

    def empty(self) -> float:
        return 0.0

    def step(self, state: float, dt: float, rng=None) -> float:
        if dt < 0:
            raise InvalidArgument("nonnegative durations only")
        return state + dt

    def dual_h(self, nu: TypeDistribution, state: float) -> TypeDistribution:
        return self.flow.evaluate(nu, state)

    def batch_dual(self, nu: TypeDistribution, states) -> np.ndarray:
        return self.flow.batch(nu, np.asarray(states, dtype=float))

    def state_to_json(self, state) -> dict:
        if state is DELTA:
            return {"kind": "delta"}
        return {"kind": "clock", "t": float(state)}

    def state_from_json(self, data: dict):
        if data["kind"] == "delta":
            return DELTA
        return float(data["t"])


class YuleLabels(LabelProcess):
    """Pure-birth line counter; each of k lines branches at the given
    rate, so holding times are exponential with rate k times that."""

    def __init__(self, space: TypeSpace, branch_rate: float, cap: int = YULE_CAP):
        if branch_rate < 0:
            raise InvalidArgument("branch rate must be nonnegative")
        self.space = space
        self.branch_rate = float(branch_rate)
        self.cap = cap

    def empty(self) -> int:
        return 1

    def step(self, state: int, dt: float, rng: np.random.Generator) -> int:
        if dt < 0:
            raise InvalidArgument("nonnegative durations only")
        if self.branch_rate == 0.0 or dt == 0.0:
            return state
        k = int(state)
        clock = 0.0
        while True:
            clock += rng.exponential(1.0 / (self.branch_rate * k))
            if clock > dt:
                return k
            k += 1
            if k > self.cap:
                raise LabelOverflow(f"line count exceeded {self.cap}")

    def dual_h(self, nu: TypeDistribution, state: int) -> TypeDistribution:
        split = condition_on_active(nu)
        if split.fit is None or split.unfit is None:
            return nu
        q = (1.0 - split.fit_share) ** int(state)
        w = q * split.unfit.weights + (1.0 - q) * split.fit.weights
        return TypeDistribution(nu.space, nu.sites, w)

    def batch_dual(self, nu: TypeDistribution, states) -> np.ndarray:
        split = condition_on_active(nu)
        ks = np.asarray(states, dtype=float)
        if split.fit is None or split.unfit is None:
            return np.tile(nu.weights, (len(ks), 1))
        q = (1.0 - split.fit_share) ** ks
        return np.outer(q, split.unfit.weights) + np.outer(1.0 - q, split.fit.weights)

    def state_to_json(self, state) -> dict:
        if state is DELTA:
            return {"kind": "delta"}
        return {"kind": "yule", "k": int(state)}

    def state_from_json(self, data: dict):
        if data["kind"] == "delta":
            return DELTA
        return int(data["k"])


CIRC = None  # untouched-site flag value


class MutationFlags(LabelProcess):
    """Per-site record of the first backward-time mutation: untouched
    (CIRC) or absorbed to letter 0/1.  Sites absorb independently at
    their mutation rates."""

    def __init__(self, space: TypeSpace, u, m0, m1):
        if any(k != 2 for k in space.alphabet_sizes):
            raise InvalidArgument("mutation flags require binary alphabets")
        self.space = space
        self.u = tuple(float(x) for x in u)
        self.m0 = tuple(float(x) for x in m0)
        self.m1 = tuple(float(x) for x in m1)
        if not len(self.u) == len(self.m0) == len(self.m1) == space.n:
            raise InvalidArgument("need per-site rates and target probabilities")
        for i in range(space.n):
            if abs(self.m0[i] + self.m1[i] - 1.0) > 1e-12:
                raise InvalidArgument(f"m0+m1 != 1 at site {i + 1}")

    def empty(self) -> tuple:
        return (CIRC,) * self.space.n

    def step(self, state: tuple, dt: float, rng: np.random.Generator) -> tuple:
        if dt < 0:
            raise InvalidArgument("nonnegative durations only")
        out = list(state)
        for i in range(self.space.n):
            if out[i] is not CIRC or self.u[i] == 0.0 or dt == 0.0:
                continue
            if rng.random() < -np.expm1(-self.u[i] * dt):
                out[i] = 0 if rng.random() < self.m0[i] else 1
        return tuple(out)

    def dual_h(self, nu: TypeDistribution, state: tuple) -> TypeDistribution:
        untouched = tuple(i for i in self.space.sites if state[i - 1] is CIRC)
        factors = []
        if untouched:
            factors.append((untouched, nu.marginal(untouched).weights))
        for i in self.space.sites:
            if state[i - 1] is CIRC:
                continue
            point = np.zeros(2)
            point[state[i - 1]] = 1.0
            factors.append(((i,), point))
        sites, w = product_weights(self.space, factors)
        return TypeDistribution(self.space, sites, w)

    def batch_dual(self, nu: TypeDistribution, states) -> np.ndarray:
        cache: dict[tuple, np.ndarray] = {}
        out = np.empty((len(states), len(nu)))
        for k, y in enumerate(states):
            row = cache.get(y)
            if row is None:
                row = self.dual_h(nu, y).weights
                cache[y] = row
            out[k] = row
        return out

    def state_to_json(self, state) -> dict:
        if state is DELTA:
            return {"kind": "delta"}
        return {"kind": "flags", "v": [None if f is CIRC else int(f) for f in state]}

    def state_from_json(self, data: dict):
        if data["kind"] == "delta":
            return DELTA
        return tuple(CIRC if f is None else int(f) for f in data["v"])


@dataclass
class SiteProcess:
    """One non-active site's label under initiation and resetting.

    From the placeholder state the process waits an exponential time at
    the site's crossover rate, then starts the label from empty; while
    the label runs it is reset to empty at the block resetting rate.
    Simulation is event-driven, with no time discretisation.
    """

    label: LabelProcess
    reset_rate: float
    split_rate: float

    def __post_init__(self):
        if self.reset_rate < 0 or self.split_rate < 0:
            raise InvalidArgument("rates must be nonnegative")

    def step(self, state, dt: float, rng: np.random.Generator):
        if dt < 0:
            raise InvalidArgument("nonnegative durations only")
        remaining = dt
        if state is DELTA:
            if self.split_rate == 0.0:
                return DELTA
            wait = rng.exponential(1.0 / self.split_rate)
            if wait >= remaining:
                return DELTA
            state = self.label.empty()
            remaining -= wait
        if self.reset_rate == 0.0:
            return self.label.step(state, remaining, rng)
        while True:
            wait = rng.exponential(1.0 / self.reset_rate)
            if wait >= remaining:
                return self.label.step(state, remaining, rng)
            remaining -= wait
            state = self.label.empty()

    def semigroup_sample(self, state, t: float, rng: np.random.Generator):
        """Draw from the one-step law written with two exponential clocks:
        from a label state, the age since the last reset is the reset
        clock truncated at t; from the placeholder, initiation happens
        first and the age is the smaller of the reset clock and the time
        since initiation.  Matches the event-driven path law; used as an
        independent route in tests."""
        if state is DELTA:
            if self.split_rate == 0.0:
                return DELTA
            s_i = rng.exponential(1.0 / self.split_rate)
            if s_i >= t:
                return DELTA
            age_cap = t - s_i
        else:
            age_cap = None
        t_i = rng.exponential(1.0 / self.reset_rate) if self.reset_rate > 0 else np.inf
        if age_cap is None:
            # no reset within t keeps the original label; otherwise the
            # state is a fresh label aged by the truncated reset clock
            if t_i >= t:
                return self.label.step(state, t, rng)
            return self.label.step(self.label.empty(), t_i, rng)
        return self.label.step(self.label.empty(), min(t_i, age_cap), rng)


def site_process_for(site: int, label: LabelProcess, rates) -> SiteProcess:
    """Build the site process from the scenario's recombination rates.

    The resetting rate is the one of the block whose outward-minimal
    site this is, which depends only on the site itself.
    """
    from .partitions import resetting_rate

    if site == rates.active_site:
        raise InvalidArgument("the active site carries the plain label process")
    reset = resetting_rate({site}, rates)
    split = rates.crossover_rate(site) if rates.is_single_crossover else 0.0
    return SiteProcess(label, reset, split)


def check_dual_assumptions(process: LabelProcess, trials: int = 64,
                           tol: float = 1e-10, horizon: float = 1.0,
                           rng: np.random.Generator | None = None) -> AssumptionReport:
    """Worst-case structural defects of the dual map over random
    reachable labels and random inputs."""
    if trials < 1:
        raise InvalidArgument("need at least one trial")
    rng = rng or np.random.default_rng(0)
    space = process.space
    worst_split = 0.0
    worst_mix = 0.0
    for _ in range(trials):
        y = process.random_state(rng, horizon)
        phi = lambda nu: process.dual_h(nu, y).weights
        worst_split = max(worst_split, split_defect_sample(phi, space, rng))
        worst_mix = max(worst_mix, mixture_defect_sample(phi, space, rng))
    return AssumptionReport(worst_split, worst_mix, trials, tol)

"""Backward-time ancestry graphs: sampling, mutation marks, propagation.

A sampled graph traces one individual's ancestry over a horizon.  Lines
grow backward; each line is hit at the partition rates, the continuing
line keeps the splitter-head share of its ancestral sites and one fresh
line is attached per tail block (possibly ancestral to nothing).  Leaf
types are drawn from the drift flow at the leaf's age restricted to its
ancestral sites; off-active mutation is added as Poisson marks along the
lines; propagating leaf types forward through marks and merges yields
the root's type, whose law across replicates estimates the forward
solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IncompleteLeaves, InvalidArgument
from .glpp import MCEstimate, replicate_rng
from .partitions import Partition, RecombinationRates
from .typespace import TypeDistribution, TypeSpace, batch_marginal_weights


@dataclass
class GraphLine:
    """One ancestral line, in backward-time coordinates.

    ``birth`` is the backward time the line was attached (0 for the
    root); every line survives to the horizon, so its leaf age is the
    horizon minus the birth time.  ``events`` indexes the graph's event
    list in increasing backward time; ``set_now`` is the ancestral set
    after the events applied so far (the leaf set once building stops).
    """

    birth: float
    set_at_birth: frozenset
    origin_event: int | None
    events: list[int] = field(default_factory=list)
    set_now: frozenset | None = None

    def __post_init__(self):
        if self.set_now is None:
            self.set_now = self.set_at_birth


@dataclass
class GraphEvent:
    time: float
    line: int
    splitter: Partition
    children: list[int] = field(default_factory=list)


@dataclass
class AncestryGraph:
    space: TypeSpace
    horizon: float
    lines: list[GraphLine]
    events: list[GraphEvent]

    @property
    def root(self) -> int:
        return 0

    def leaf_age(self, line_id: int) -> float:
        return self.horizon - self.lines[line_id].birth

    def leaf_set(self, line_id: int) -> frozenset:
        """Ancestral sites at the far (leaf) end of a line."""
        return self.lines[line_id].set_now

    def _head_tails(self, splitter: Partition):
        cache = getattr(self, "_ht_cache", None)
        if cache is None:
            cache = {}
            object.__setattr__(self, "_ht_cache", cache)
        hit = cache.get(splitter.rgs)
        if hit is None:
            hit = (frozenset(splitter.head(self.space.active_site)),
                   [frozenset(b) for b in splitter.tail(self.space.active_site)])
            cache[splitter.rgs] = hit
        return hit

    def segment_sets(self, line_id: int):
        """(backward_lo, backward_hi, sites) pieces from birth to leaf."""
        line = self.lines[line_id]
        current = line.set_at_birth
        lo = line.birth
        out = []
        for ev_id in line.events:
            ev = self.events[ev_id]
            out.append((lo, ev.time, current))
            current = current & frozenset(ev.splitter.head(self.space.active_site))
            lo = ev.time
        out.append((lo, self.horizon, current))
        return out

    def apply_event(self, line_id: int, time: float, splitter: Partition) -> int:
        """Hit a line with a splitter at a backward time, attaching one
        fresh line per tail block (possibly ancestral to nothing).
        Events on a line must be added in increasing time order."""
        line = self.lines[line_id]
        if not line.birth <= time < self.horizon:
            raise InvalidArgument("event time outside the line's span")
        if line.events and self.events[line.events[-1]].time > time:
            raise InvalidArgument("events must be added in increasing time order")
        head, tails = self._head_tails(splitter)
        current = line.set_now
        ev_id = len(self.events)
        ev = GraphEvent(time, line_id, splitter)
        self.events.append(ev)
        line.events.append(ev_id)
        for tail_block in tails:
            child_id = len(self.lines)
            self.lines.append(GraphLine(time, current & tail_block, ev_id))
            ev.children.append(child_id)
        line.set_now = current & head
        return ev_id

    def cross_section(self, beta: float):
        """Ancestral sets of all lines alive at backward time beta."""
        out = []
        for lid, line in enumerate(self.lines):
            if line.birth > beta:
                continue
            current = line.set_at_birth
            for ev_id in line.events:
                ev = self.events[ev_id]
                if ev.time > beta:
                    break
                current = current & frozenset(ev.splitter.head(self.space.active_site))
            out.append((lid, current))
        return out

    def to_dot(self) -> str:
        """Graphviz rendering with one rank per event time."""
        lines = ["digraph ancestry {", "  rankdir=RL;", "  node [shape=box];"]
        for lid in range(len(self.lines)):
            sites = ",".join(map(str, sorted(self.leaf_set(lid)))) or "-"
            age = self.leaf_age(lid)
            lines.append(
                f'  leaf{lid} [shape=ellipse,label="leaf {lid}\\n{{{sites}}} age {age:.3g}"];')
        for eid, ev in enumerate(self.events):
            rgs = "".join(map(str, ev.splitter.rgs))
            lines.append(f'  ev{eid} [label="t={ev.time:.3g}\\nB={rgs}"];')
        lines.append('  root [shape=doublecircle,label="root"];')

        def anchor(line_id: int) -> str:
            line = self.lines[line_id]
            nxt = line.events[0] if line.events else None
            return f"ev{nxt}" if nxt is not None else f"leaf{line_id}"

        for eid, ev in enumerate(self.events):
            line = self.lines[ev.line]
            later = [e for e in line.events if e > eid]
            src = f"ev{later[0]}" if later else f"leaf{ev.line}"
            dst = f"ev{eid}"
            lines.append(f"  {src} -> {dst};")
            for child in ev.children:
                lines.append(f"  {anchor(child)} -> ev{eid} [style=dashed];")
        first = self.lines[0].events
        lines.append(f"  {f'ev{first[0]}' if first else 'leaf0'} -> root;")
        by_time: dict[float, list[str]] = {}
        for eid, ev in enumerate(self.events):
            by_time.setdefault(ev.time, []).append(f"ev{eid}")
        for nodes in by_time.values():
            lines.append("  { rank=same; " + "; ".join(nodes) + "; }")
        lines.append("}")
        return "\n".join(lines)


def sample_graph(t: float, rates: RecombinationRates, space: TypeSpace,
                 rng: np.random.Generator) -> AncestryGraph:
    """Sample one ancestry graph over [0, t] backward from the root."""
    if t < 0:
        raise InvalidArgument("nonnegative horizon only")
    table = rates.partition_rates()
    total = sum(r for _, r in table)
    cum = np.cumsum([r for _, r in table]) / total if table else None
    graph = AncestryGraph(space, t, [], [])
    graph.lines.append(GraphLine(0.0, frozenset(space.sites), None))
    stack = [0]
    while stack:
        lid = stack.pop()
        if total <= 0:
            continue
        now = graph.lines[lid].birth
        while True:
            now += rng.exponential(1.0 / total)
            if now >= t:
                break
            part = table[int(np.searchsorted(cum, rng.random(), side="right"))][0]
            ev_id = graph.apply_event(lid, now, part)
            stack.extend(graph.events[ev_id].children)
    return graph


@dataclass
class MutationMarks:
    """Poisson mark times per (line, site), split by target letter.

    Marks exist on every line; propagation only consults them while the
    site is carried by the line, so marks elsewhere are inert.
    """

    to0: dict[tuple[int, int], np.ndarray]
    to1: dict[tuple[int, int], np.ndarray]

    def count(self) -> int:
        return sum(len(v) for v in self.to0.values()) + \
            sum(len(v) for v in self.to1.values())


def sample_marks(graph: AncestryGraph, u: dict[int, float], m0: dict[int, float],
                 m1: dict[int, float], rng: np.random.Generator) -> MutationMarks:
    """Independent Poisson marks along every line for each mutating site."""
    to0: dict[tuple[int, int], np.ndarray] = {}
    to1: dict[tuple[int, int], np.ndarray] = {}
    sites = [s for s in sorted(u) if u[s] > 0]
    if not sites:
        return MutationMarks(to0, to1)
    # one Poisson draw covering every (line, site, target) cell at once
    per_cell = np.array([[u[s] * m0[s], u[s] * m1[s]] for s in sites]).reshape(-1)
    births = np.array([line.birth for line in graph.lines])
    lengths = graph.horizon - births
    counts = rng.poisson(np.outer(lengths, per_cell))
    total = int(counts.sum())
    if not total:
        return MutationMarks(to0, to1)
    unis = rng.random(total)
    pos = 0
    for lid in np.nonzero(counts.sum(axis=1))[0]:
        row = counts[lid]
        for j, site in enumerate(sites):
            for target, k in ((to0, int(row[2 * j])), (to1, int(row[2 * j + 1]))):
                if k:
                    target[(int(lid), site)] = np.sort(
                        births[lid] + lengths[lid] * unis[pos: pos + k])
                    pos += k
    return MutationMarks(to0, to1)


def propagate(graph: AncestryGraph, marks: MutationMarks | None,
              leaf_types: dict[int, dict[int, int]]) -> tuple[int, ...]:
    """Push leaf types forward to the root.

    ``leaf_types`` maps each ancestral leaf to {site: letter} on its leaf
    set.  Marks flip the carried letter; within a segment the mark
    closest to the present wins.  Nonancestral leaves may be omitted.
    """
    empty = MutationMarks({}, {})
    marks = marks or empty

    def apply_marks(lid, sites, letters, lo, hi):
        # backward-time window (lo, hi]; apply in decreasing time order
        for site in sites:
            t0 = marks.to0.get((lid, site))
            t1 = marks.to1.get((lid, site))
            best = None
            target = None
            if t0 is not None:
                sel = t0[(t0 > lo) & (t0 <= hi)]
                if sel.size:
                    best, target = sel[0], 0
            if t1 is not None:
                sel = t1[(t1 > lo) & (t1 <= hi)]
                if sel.size and (best is None or sel[0] < best):
                    best, target = sel[0], 1
            if target is not None:
                letters[site] = target

    def line_value(lid: int) -> dict[int, int]:
        line = graph.lines[lid]
        leaf_sites = graph.leaf_set(lid)
        if leaf_sites:
            got = leaf_types.get(lid)
            if got is None or set(got) != set(leaf_sites):
                raise IncompleteLeaves(f"leaf {lid} missing type on {sorted(leaf_sites)}")
            letters = dict(got)
        else:
            letters = {}
        hi = graph.horizon
        for ev_id in reversed(line.events):
            ev = graph.events[ev_id]
            apply_marks(lid, list(letters), letters, ev.time, hi)
            for child in ev.children:
                letters.update(line_value(child))
            hi = ev.time
        apply_marks(lid, list(letters), letters, line.birth, hi)
        return letters

    letters = line_value(graph.root)
    if set(letters) != set(graph.space.sites):
        raise IncompleteLeaves("root type incomplete after propagation")
    return tuple(letters[i] for i in graph.space.sites)


def estimate(omega0: TypeDistribution, t: float, rates: RecombinationRates,
             flow, replicates: int, seed: int, *,
             u: dict[int, float] | None = None,
             m0: dict[int, float] | None = None,
             m1: dict[int, float] | None = None) -> MCEstimate:
    """Estimate the forward solution from sampled ancestry graphs.

    ``flow`` is the drift flow used to draw leaf types (its marginal on
    the leaf's ancestral set at the leaf's age); ``u``/``m0``/``m1``
    decorate the graph with off-active mutation marks.
    """
    if replicates < 1:
        raise InvalidArgument("need at least one replicate")
    space = omega0.space
    if omega0.sites != space.sites:
        raise InvalidArgument("estimation needs a full-support initial state")
    u = u or {}

    # phase 1: sample graphs, marks, and one uniform per ancestral leaf
    graphs = []
    for k in range(replicates):
        rng = replicate_rng(seed, k)
        g = sample_graph(t, rates, space, rng)
        mk = sample_marks(g, u, m0 or {}, m1 or {}, rng) if u else None
        leaves = []
        for lid in range(len(g.lines)):
            sites = g.leaf_set(lid)
            if sites:
                leaves.append((lid, tuple(sorted(sites)), float(rng.random())))
        graphs.append((g, mk, leaves))

    # phase 2: flow weights at every distinct leaf age, one pass
    ages = np.array([g.leaf_age(lid)
                     for g, _, leaves in graphs for lid, _, _ in leaves])
    rows = flow.batch(omega0, ages) if ages.size else np.empty((0, len(omega0)))

    # phase 3: sample leaf letters per ancestral-site set, vectorised
    by_sites: dict[tuple, list[int]] = {}
    flat = []
    for g, _, leaves in graphs:
        for lid, sites, uni in leaves:
            flat.append((sites, uni))
    for idx, (sites, _) in enumerate(flat):
        by_sites.setdefault(sites, []).append(idx)
    letters_for = [None] * len(flat)
    for sites, idxs in by_sites.items():
        sub = batch_marginal_weights(space, space.sites, rows[idxs], sites)
        table = space.decode_table(sites)
        unis = np.array([flat[i][1] for i in idxs])
        cdf = np.cumsum(sub, axis=1)
        cols = np.minimum((cdf < unis[:, None]).sum(axis=1), sub.shape[1] - 1)
        for i, c in zip(idxs, cols):
            letters_for[i] = dict(zip(sites, table[c]))

    # phase 4: propagate to the root and tally
    counts = np.zeros(len(omega0), dtype=np.int64)
    pos = 0
    for g, mk, leaves in graphs:
        leaf_types = {}
        for lid, sites, _ in leaves:
            leaf_types[lid] = letters_for[pos]
            pos += 1
        root = propagate(g, mk, leaf_types)
        counts[space.encode(root)] += 1
    mean = counts / replicates
    stderr = np.sqrt(mean * (1.0 - mean) / replicates)
    dist = TypeDistribution.from_raw(space, space.sites, mean,
                                     neg_tol=0.0, mass_tol=1e-12)
    return MCEstimate(dist, stderr, replicates, seed)

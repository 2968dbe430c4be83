"""Set partitions of the site set and the surrounding algebra.

The canonical internal representation is a restricted growth string
(RGS): position i-1 holds the block id of site i, block ids appearing in
order of first occurrence.  Blocks are therefore always ordered by their
minimal element.  The module also provides the outward partial order
induced by the active site, two-block single-crossover splits, label
resetting rates, the block-splitting operator on labelled partitions,
and the bijection between labelled interval partitions and per-site
labellings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .errors import (
    InvalidArgument,
    InvalidBlock,
    InvalidPartition,
    NotIntervalPartition,
)


class _Delta:
    """Placeholder marking a site that carries no block label."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "DELTA"


DELTA = _Delta()


class Partition:
    """Canonical set partition of sites 1..n, hashable and immutable."""

    __slots__ = ("rgs", "_blocks")

    def __init__(self, rgs: Sequence[int]):
        rgs = tuple(int(b) for b in rgs)
        if not rgs:
            raise InvalidPartition("empty growth string")
        top = -1
        for i, b in enumerate(rgs):
            if b < 0 or b > top + 1:
                raise InvalidPartition(f"not a restricted growth string at position {i}: {rgs}")
            top = max(top, b)
        self.rgs = rgs
        blocks: list[list[int]] = [[] for _ in range(top + 1)]
        for site, b in enumerate(rgs, start=1):
            blocks[b].append(site)
        self._blocks = tuple(tuple(b) for b in blocks)

    @classmethod
    def from_blocks(cls, blocks: Iterable[Iterable[int]], n: int) -> "Partition":
        """Canonicalize a collection of blocks; they must be nonempty,
        disjoint, and cover 1..n."""
        rgs = [-1] * n
        for bid, block in enumerate(sorted((sorted(b) for b in blocks), key=lambda b: b[0] if b else -1)):
            if not block:
                raise InvalidPartition("empty block")
            for site in block:
                if not 1 <= site <= n:
                    raise InvalidPartition(f"site {site} outside 1..{n}")
                if rgs[site - 1] != -1:
                    raise InvalidPartition(f"site {site} in two blocks")
                rgs[site - 1] = bid
        if -1 in rgs:
            raise InvalidPartition(f"site {rgs.index(-1) + 1} not covered")
        # renumber in order of first occurrence (blocks sorted by min already)
        return cls(rgs)

    @classmethod
    def trivial(cls, n: int) -> "Partition":
        return cls((0,) * n)

    @classmethod
    def discrete(cls, n: int) -> "Partition":
        return cls(tuple(range(n)))

    @property
    def n(self) -> int:
        return len(self.rgs)

    def blocks(self) -> tuple[tuple[int, ...], ...]:
        return self._blocks

    def block_of(self, site: int) -> tuple[int, ...]:
        return self._blocks[self.rgs[site - 1]]

    def __len__(self) -> int:
        return len(self._blocks)

    def __eq__(self, other):
        return isinstance(other, Partition) and self.rgs == other.rgs

    def __hash__(self):
        return hash(self.rgs)

    def __repr__(self):
        inner = "|".join(",".join(map(str, b)) for b in self._blocks)
        return f"Partition({{{inner}}})"

    def restrict(self, sigma: Iterable[int]) -> tuple[tuple[int, ...], ...]:
        """The partition induced on a nonempty site subset sigma."""
        sigma = sorted(set(sigma))
        if not sigma:
            raise InvalidArgument("cannot restrict to the empty set")
        out: dict[int, list[int]] = {}
        for s in sigma:
            out.setdefault(self.rgs[s - 1], []).append(s)
        return tuple(tuple(v) for v in sorted(out.values(), key=lambda b: b[0]))

    def meet(self, other: "Partition") -> "Partition":
        """Coarsest common refinement: all nonempty pairwise block
        intersections."""
        if self.n != other.n:
            raise InvalidArgument("partitions of different site sets")
        pair_ids: dict[tuple[int, int], int] = {}
        rgs = []
        for a, b in zip(self.rgs, other.rgs):
            rgs.append(pair_ids.setdefault((a, b), len(pair_ids)))
        return Partition(rgs)

    def head(self, active_site: int) -> tuple[int, ...]:
        """The unique block containing the active site."""
        return self.block_of(active_site)

    def tail(self, active_site: int) -> tuple[tuple[int, ...], ...]:
        hid = self.rgs[active_site - 1]
        return tuple(b for i, b in enumerate(self._blocks) if i != hid)

    def head_tail(self, active_site: int):
        return self.head(active_site), self.tail(active_site)

    def is_interval(self) -> bool:
        """True when every block is a contiguous run of sites."""
        return all(b[-1] - b[0] + 1 == len(b) for b in self._blocks)

    def to_json(self) -> list[int]:
        return list(self.rgs)

    @classmethod
    def from_json(cls, data: Sequence[int]) -> "Partition":
        return cls(data)


def canonicalize(blocks: Iterable[Iterable[int]], n: int) -> Partition:
    return Partition.from_blocks(blocks, n)


def all_partitions(n: int) -> Iterator[Partition]:
    """All partitions of 1..n in lexicographic growth-string order."""
    rgs = [0] * n
    tops = [0] * n

    def rec(i: int):
        if i == n:
            yield Partition(rgs)
            return
        top = tops[i - 1] if i > 0 else -1
        for b in range(top + 2):
            rgs[i] = b
            tops[i] = max(top, b)
            yield from rec(i + 1)

    yield from rec(0)


def bell_number(n: int) -> int:
    if n < 1:
        return 1
    row = [1]
    for _ in range(n - 1):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[-1]


def precedes(i: int, j: int, active_site: int) -> bool:
    """Outward partial order: i comes before j when j is at least as far
    from the active site on the same side (the active site precedes
    everything)."""
    return (active_site <= i <= j) or (j <= i <= active_site)


def outward_min(block: Iterable[int], active_site: int) -> int:
    """The element of a block closest to the active site.

    Only meaningful for blocks containing the active site or lying
    entirely on one side of it; mixed-side blocks are rejected.
    """
    block = sorted(block)
    if block[0] <= active_site <= block[-1]:
        if active_site not in block:
            raise NotIntervalPartition(f"block {block} straddles site {active_site}")
        return active_site
    return block[-1] if block[-1] < active_site else block[0]


def split_pair(i: int, active_site: int, n: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """The two-block split induced by a non-active site i: the far side
    D_i of everything succeeding i, and its complement C_i (which keeps
    the active site)."""
    if i == active_site:
        raise InvalidArgument("no split at the active site")
    if not 1 <= i <= n:
        raise InvalidArgument(f"site {i} outside 1..{n}")
    if i > active_site:
        d = tuple(range(i, n + 1))
        c = tuple(range(1, i))
    else:
        d = tuple(range(1, i + 1))
        c = tuple(range(i + 1, n + 1))
    return c, d


@dataclass(frozen=True)
class RecombinationRates:
    """Nonnegative rates on partitions of the site set.

    ``single_crossover`` mode stores one rate per non-active site i,
    interpreted as the rate of the two-block split at i.  ``general``
    mode stores an explicit partition -> rate map.  The trivial one-block
    partition is allowed but only ever produces silent transitions.
    """

    n: int
    active_site: int
    mode: str
    crossover: dict[int, float] | None = None
    general: dict[Partition, float] | None = None

    def __post_init__(self):
        if self.mode not in ("single_crossover", "general"):
            raise InvalidArgument(f"unknown rate mode {self.mode!r}")
        if self.mode == "single_crossover":
            if self.crossover is None:
                raise InvalidArgument("single_crossover mode needs per-site rates")
            for i, r in self.crossover.items():
                if i == self.active_site or not 1 <= i <= self.n:
                    raise InvalidArgument(f"crossover rate at illegal site {i}")
                if r < 0:
                    raise InvalidArgument(f"negative rate at site {i}")
        else:
            if self.general is None:
                raise InvalidArgument("general mode needs a partition rate map")
            for part, r in self.general.items():
                if part.n != self.n:
                    raise InvalidArgument("partition on wrong site count")
                if r < 0:
                    raise InvalidArgument("negative partition rate")

    @classmethod
    def single_crossover_list(cls, n: int, active_site: int, rates: Sequence[float]) -> "RecombinationRates":
        """Rates listed for the non-active sites in increasing site order."""
        sites = [i for i in range(1, n + 1) if i != active_site]
        if len(rates) != len(sites):
            raise InvalidArgument(f"expected {len(sites)} rates, got {len(rates)}")
        return cls(n, active_site, "single_crossover",
                   crossover={i: float(r) for i, r in zip(sites, rates)})

    @classmethod
    def from_partition_map(cls, n: int, active_site: int, table: dict[Partition, float]) -> "RecombinationRates":
        return cls(n, active_site, "general", general=dict(table))

    @property
    def is_single_crossover(self) -> bool:
        return self.mode == "single_crossover"

    def crossover_rate(self, i: int) -> float:
        if not self.is_single_crossover:
            raise InvalidArgument("not in single-crossover mode")
        return self.crossover.get(i, 0.0)

    def partition_rates(self) -> list[tuple[Partition, float]]:
        """(partition, rate) pairs with positive rate, deterministic
        order; memoised, simulators call this per path."""
        cached = getattr(self, "_pairs", None)
        if cached is not None:
            return cached
        if self.is_single_crossover:
            out = []
            for i in sorted(self.crossover):
                r = self.crossover[i]
                if r > 0:
                    c, d = split_pair(i, self.active_site, self.n)
                    out.append((Partition.from_blocks([c, d], self.n), r))
        else:
            out = [(p, r) for p, r in sorted(self.general.items(), key=lambda kv: kv[0].rgs)
                   if r > 0]
        object.__setattr__(self, "_pairs", out)
        return out

    def total_rate(self) -> float:
        return sum(r for _, r in self.partition_rates())

    def to_json_dict(self) -> dict:
        if self.is_single_crossover:
            sites = [i for i in range(1, self.n + 1) if i != self.active_site]
            return {"mode": "single_crossover",
                    "rates": [self.crossover.get(i, 0.0) for i in sites]}
        return {"mode": "general",
                "rates": [{"partition": p.to_json(), "rate": r}
                          for p, r in sorted(self.general.items(), key=lambda kv: kv[0].rgs)]}


def resetting_rate(block: Iterable[int], rates: RecombinationRates) -> float:
    """Total rate of splits that reset the label of ``block``: those
    whose tail contains a superset of it.  Zero for any block containing
    the active site."""
    block = frozenset(block)
    if not block:
        raise InvalidArgument("empty block")
    if rates.active_site in block:
        return 0.0
    if rates.is_single_crossover:
        total = 0.0
        for i, r in rates.crossover.items():
            _, d = split_pair(i, rates.active_site, rates.n)
            if block <= frozenset(d):
                total += r
        return total
    total = 0.0
    for part, r in rates.general.items():
        for b in part.tail(rates.active_site):
            if block <= frozenset(b):
                total += r
                break
    return total


@dataclass(frozen=True)
class LabelledPartition:
    """A partition together with one label per block, aligned with the
    canonical block order."""

    partition: Partition
    labels: tuple

    def __post_init__(self):
        if len(self.labels) != len(self.partition):
            raise InvalidArgument("one label per block required")

    def label_of(self, block: Iterable[int]):
        block = tuple(sorted(block))
        for b, v in zip(self.partition.blocks(), self.labels):
            if b == block:
                return v
        raise InvalidBlock(f"{block} is not a block")

    def head_label(self, active_site: int):
        return self.labels[self.partition.rgs[active_site - 1]]

    def as_dict(self) -> dict[tuple[int, ...], object]:
        return dict(zip(self.partition.blocks(), self.labels))


def boxwedge(state: LabelledPartition, block: Iterable[int], splitter: Partition,
             empty, active_site: int) -> LabelledPartition:
    """Split one block of a labelled partition by another partition.

    The piece meeting the splitter's head inherits the old label; all
    other pieces get the ``empty`` label.  When the block is inside the
    splitter's head the transition is silent and the state is returned
    unchanged; when it is inside a tail block, only its label is reset.
    """
    block = tuple(sorted(block))
    old = state.as_dict()
    if block not in old:
        raise InvalidBlock(f"{block} is not a block of the partition")
    head = frozenset(splitter.head(active_site))
    bset = frozenset(block)
    if bset <= head:
        return state
    pieces = splitter.restrict(block)
    new_labels = dict(old)
    del new_labels[block]
    if len(pieces) == 1:
        new_labels[block] = empty
    else:
        for piece in pieces:
            new_labels[piece] = old[block] if set(piece) <= head else empty
    part = Partition.from_blocks(new_labels.keys(), state.partition.n)
    return LabelledPartition(part, tuple(new_labels[b] for b in part.blocks()))


def encode_site_labels(lp: LabelledPartition, active_site: int) -> tuple:
    """Flatten a labelled interval partition into one label per site.

    The head's label sits at the active site, every other block's label
    at its outward-minimal site, and all remaining sites carry DELTA.
    """
    part = lp.partition
    if not part.is_interval():
        raise NotIntervalPartition(f"{part!r} has a non-contiguous block")
    out: list = [DELTA] * part.n
    for block, label in zip(part.blocks(), lp.labels):
        pos = outward_min(block, active_site)
        out[pos - 1] = label
    return tuple(out)


def decode_site_labels(site_labels: Sequence, active_site: int) -> LabelledPartition:
    """Inverse of :func:`encode_site_labels`.

    Every labelled site other than the active one opens a new block on
    its side of the sequence; the active site must be labelled.
    """
    n = len(site_labels)
    if not 1 <= active_site <= n:
        raise InvalidArgument("active site outside the labelling")
    if site_labels[active_site - 1] is DELTA:
        raise NotIntervalPartition("active site carries no label")
    cuts_right = sorted(i for i in range(active_site + 1, n + 1) if site_labels[i - 1] is not DELTA)
    cuts_left = sorted((i for i in range(1, active_site) if site_labels[i - 1] is not DELTA), reverse=True)
    blocks: list[tuple[int, ...]] = []
    lo = cuts_left[0] + 1 if cuts_left else 1
    hi = cuts_right[0] - 1 if cuts_right else n
    blocks.append(tuple(range(lo, hi + 1)))  # head block
    for k, c in enumerate(cuts_right):
        stop = cuts_right[k + 1] - 1 if k + 1 < len(cuts_right) else n
        blocks.append(tuple(range(c, stop + 1)))
    for k, c in enumerate(cuts_left):
        stop = cuts_left[k + 1] + 1 if k + 1 < len(cuts_left) else 1
        blocks.append(tuple(range(stop, c + 1)))
    part = Partition.from_blocks(blocks, n)
    labels = []
    for block in part.blocks():
        pos = outward_min(block, active_site)
        labels.append(site_labels[pos - 1])
    return LabelledPartition(part, tuple(labels))

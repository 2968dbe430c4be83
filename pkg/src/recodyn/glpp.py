"""Jump-chain simulation of labelled partitions and duality estimation.

Blocks split independently at the partition rates; the piece containing
the active site keeps its label, fresh pieces start from the empty
label, and a block swallowed by a tail block has its label reset.
Between events labels evolve on their own, which is exploited by storing
only (state at last touch, touch time) per block and advancing lazily.
The duality estimator averages, over many simulated paths, the product
over blocks of the label-dual distributions restricted to their blocks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import AssumptionViolation, InvalidArgument
from .labels import LabelProcess, check_dual_assumptions
from .partitions import LabelledPartition, Partition, RecombinationRates
from .typespace import (
    TypeDistribution,
    batch_marginal_weights,
    marginal_weights,
    product_weights,
)


@dataclass(frozen=True)
class PartitionEvent:
    time: float
    block: tuple[int, ...]
    splitter: Partition

    def to_json_dict(self) -> dict:
        return {"t": self.time, "block": list(self.block), "B": self.splitter.to_json()}


@dataclass
class GLPPState:
    """Final labelled partition (labels advanced to the horizon), the
    horizon itself, and optionally the applied event log."""

    labelled: LabelledPartition
    clock: float
    events: list[PartitionEvent] | None = None


@dataclass(frozen=True)
class MCEstimate:
    mean: TypeDistribution
    stderr: np.ndarray
    replicates: int
    seed: int

    def tv_tolerance(self, floor: float = 0.01) -> float:
        return max(floor, 3.0 * float(self.stderr.max()))

    def to_json_dict(self) -> dict:
        return {
            "mean": self.mean.to_json_dict(),
            "stderr": [float(x) for x in self.stderr],
            "replicates": self.replicates,
            "seed": self.seed,
        }


def _rate_table(rates: RecombinationRates):
    """Per splitter: (Partition, block frozensets, head index, rate)."""
    table = []
    for part, rate in rates.partition_rates():
        blocks = [frozenset(b) for b in part.blocks()]
        head_idx = part.rgs[rates.active_site - 1]
        table.append((part, blocks, head_idx, rate))
    return table


def _apply_split(entry, block_idx, blocks, now):
    """Apply one splitter to one block in place; returns True when the
    state changed.  ``blocks`` holds [frozenset, state, birth] rows."""
    _, pieces, head_idx, _ = entry
    bset, state, birth = blocks[block_idx]
    head_piece = bset & pieces[head_idx]
    if head_piece == bset:
        return False  # inside the splitter's head: silent
    replacement = []
    for j, piece in enumerate(pieces):
        inter = bset & piece
        if not inter:
            continue
        if j == head_idx:
            replacement.append([inter, state, birth])
        else:
            replacement.append([inter, None, now])
    blocks[block_idx: block_idx + 1] = replacement
    return True


def _is_silent(entry, bset) -> bool:
    _, pieces, head_idx, _ = entry
    return bset <= pieces[head_idx]


def simulate(initial: LabelledPartition | None, t: float, rates: RecombinationRates,
             process: LabelProcess, rng: np.random.Generator, *,
             log_events: bool = False, mode: str = "faithful") -> GLPPState:
    """Run the labelled partitioning process to the horizon.

    ``mode="faithful"`` plays every event including silent ones;
    ``mode="thinned"`` samples only effective events (identical in law).
    The default initial state is the one-block partition with the empty
    label.
    """
    if t < 0:
        raise InvalidArgument("nonnegative horizon only")
    if mode not in ("faithful", "thinned"):
        raise InvalidArgument(f"unknown mode {mode!r}")
    space_n = rates.n
    table = _rate_table(rates)
    if initial is None:
        blocks = [[frozenset(range(1, space_n + 1)), process.empty(), 0.0]]
    else:
        blocks = [[frozenset(b), v, 0.0]
                  for b, v in zip(initial.partition.blocks(), initial.labels)]
    log: list[PartitionEvent] | None = [] if log_events else None

    if table:
        if mode == "faithful":
            _run_faithful(blocks, t, table, rng, log)
        else:
            _run_thinned(blocks, t, table, rng, log)

    final_blocks = []
    labels = []
    for bset, state, birth in sorted(blocks, key=lambda b: min(b[0])):
        final_blocks.append(tuple(sorted(bset)))
        labels.append(process.step(state if state is not None else process.empty(),
                                   t - birth, rng))
    lp = LabelledPartition(Partition.from_blocks(final_blocks, space_n), tuple(labels))
    return GLPPState(lp, t, log)


def _run_faithful(blocks, t, table, rng, log):
    total = sum(entry[3] for entry in table)
    cum = np.cumsum([entry[3] for entry in table]) / total
    now = 0.0
    while True:
        now += rng.exponential(1.0 / (total * len(blocks)))
        if now >= t:
            return
        entry = table[int(np.searchsorted(cum, rng.random(), side="right"))]
        idx = int(rng.integers(len(blocks)))
        if log is not None:
            log.append(PartitionEvent(now, tuple(sorted(blocks[idx][0])), entry[0]))
        _apply_split(entry, idx, blocks, now)


def _run_thinned(blocks, t, table, rng, log):
    eff_cache: dict[frozenset, tuple[float, np.ndarray, list]] = {}

    def effective(bset):
        hit = eff_cache.get(bset)
        if hit is None:
            entries = [e for e in table if not _is_silent(e, bset)]
            rs = np.array([e[3] for e in entries])
            tot = float(rs.sum())
            cum = np.cumsum(rs) / tot if tot > 0 else rs
            hit = (tot, cum, entries)
            eff_cache[bset] = hit
        return hit

    now = 0.0
    while True:
        effs = [effective(b[0]) for b in blocks]
        total = sum(e[0] for e in effs)
        if total <= 0:
            return
        now += rng.exponential(1.0 / total)
        if now >= t:
            return
        probs = np.cumsum([e[0] for e in effs]) / total
        idx = int(np.searchsorted(probs, rng.random(), side="right"))
        tot, cum, entries = effs[idx]
        entry = entries[int(np.searchsorted(cum, rng.random(), side="right"))]
        if log is not None:
            log.append(PartitionEvent(now, tuple(sorted(blocks[idx][0])), entry[0]))
        _apply_split(entry, idx, blocks, now)


def write_event_log(fh, state: GLPPState) -> None:
    """One JSON object per line for each applied event."""
    if state.events is None:
        raise InvalidArgument("simulation was run without event logging")
    for ev in state.events:
        fh.write(json.dumps(ev.to_json_dict()) + "\n")


def duality_product(lp: LabelledPartition, nu: TypeDistribution,
                    process: LabelProcess) -> TypeDistribution:
    """Product over blocks of the label duals restricted to their blocks."""
    space = nu.space
    factors = []
    for block, label in zip(lp.partition.blocks(), lp.labels):
        dual = process.dual_h(nu, label)
        factors.append((block, marginal_weights(space, dual.sites, dual.weights, block)))
    sites, w = product_weights(space, factors)
    return TypeDistribution(space, sites, w)


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent substream for one replicate; depends only on the
    master seed and the replicate index, not on execution order."""
    return np.random.default_rng([seed, index])


_EINSUM_LETTERS = "abcdefghijklmn"


def _batch_apply_site_matrix(space, block, rows, site, mat):
    desc = sorted(block, reverse=True)
    ax = 1 + desc.index(site)
    t = rows.reshape((rows.shape[0],) + space.shape(block))
    t = np.tensordot(mat, t, axes=([1], [ax]))
    t = np.moveaxis(t, 0, ax)
    return np.ascontiguousarray(t).reshape(rows.shape[0], -1)


def estimate(omega0: TypeDistribution, t: float, rates: RecombinationRates,
             process: LabelProcess, replicates: int, seed: int, *,
             sitewise_post: dict[int, np.ndarray] | None = None,
             mode: str = "faithful", check_process: bool = True,
             override: bool = False) -> MCEstimate:
    """Monte Carlo estimate of the forward solution via the duality.

    Averages the per-path duality products started from the one-block
    empty-labelled state.  ``sitewise_post`` optionally applies a small
    per-site matrix to every path's result (used for the off-active
    mutation envelope); it is folded into the block factors, so reported
    standard errors account for it exactly.

    The label process must pass the structural dual check whenever
    recombination is active (``override`` skips the check).
    """
    if replicates < 1:
        raise InvalidArgument("need at least one replicate")
    space = omega0.space
    if omega0.sites != space.sites:
        raise InvalidArgument("estimation needs a full-support initial state")
    if check_process and not override and rates.total_rate() > 0:
        report = check_dual_assumptions(process, trials=16, tol=1e-6,
                                        horizon=max(t, 0.1),
                                        rng=np.random.default_rng(0x5EED))
        if not report.passed:
            raise AssumptionViolation(
                f"label process fails the dual structure check "
                f"(worst defect {report.max_defect:.3g}); pass override=True "
                "to estimate anyway")

    # phase 1: simulate all paths, keep (blocks, label values)
    sims = []
    for k in range(replicates):
        rng = replicate_rng(seed, k)
        st = simulate(None, t, rates, process, rng, mode=mode)
        sims.append((st.labelled.partition.rgs,
                     st.labelled.partition.blocks(), st.labelled.labels))

    # phase 2: evaluate all dual maps in one batch per process
    flat_values = [v for _, _, labels in sims for v in labels]
    dual_rows = process.batch_dual(omega0, flat_values)

    offsets = np.zeros(len(sims) + 1, dtype=int)
    for k, (_, blocks, _) in enumerate(sims):
        offsets[k + 1] = offsets[k] + len(blocks)

    groups: dict[tuple, list[int]] = {}
    for k, (key, _, _) in enumerate(sims):
        groups.setdefault(key, []).append(k)

    n_states = len(omega0)
    total_sum = np.zeros(n_states)
    total_sq = np.zeros(n_states)
    desc_all = tuple(sorted(space.sites, reverse=True))
    for key in sorted(groups):
        members = groups[key]
        blocks = sims[members[0]][1]
        block_rows = []
        for j, block in enumerate(blocks):
            rows = dual_rows[[offsets[k] + j for k in members]]
            rows = batch_marginal_weights(space, space.sites, rows, block)
            if sitewise_post:
                for site in block:
                    mat = sitewise_post.get(site)
                    if mat is not None:
                        rows = _batch_apply_site_matrix(space, block, rows, site, mat)
            block_rows.append(rows)
        letters = _EINSUM_LETTERS[: len(blocks)]
        spec_str = ",".join(f"z{c}" for c in letters) + "->" + letters
        g_sum = np.einsum(spec_str, *block_rows)
        g_sq = np.einsum(spec_str, *[r * r for r in block_rows])
        concat = [s for b in blocks for s in sorted(b, reverse=True)]
        site_shape = tuple(space.site_size(s) for s in concat)
        perm = [concat.index(s) for s in desc_all]
        total_sum += g_sum.reshape(site_shape).transpose(perm).reshape(-1)
        total_sq += g_sq.reshape(site_shape).transpose(perm).reshape(-1)

    mean = total_sum / replicates
    if replicates > 1:
        var = (total_sq - replicates * mean ** 2) / (replicates - 1)
        stderr = np.sqrt(np.clip(var, 0.0, None) / replicates)
    else:
        stderr = np.full(n_states, np.inf)
    dist = TypeDistribution.from_raw(space, space.sites, mean,
                                     neg_tol=1e-12, mass_tol=1e-9)
    return MCEstimate(dist, stderr, replicates, seed)

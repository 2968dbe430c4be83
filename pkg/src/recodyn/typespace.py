"""Finite product type spaces and dense distributions on them.

Genomes are tuples over per-site alphabets, sites numbered 1..n.  All
distributions are dense weight vectors indexed in mixed radix with site 1
as the least significant digit.  Distributions restricted to a site
subset A use the same convention within A (smallest site least
significant), so a weight vector on A reshaped to one axis per site in
*descending* site order ravels back to itself in C order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    IncompatibleSupports,
    InvalidArgument,
    InvalidDistribution,
    InvalidPartitionFactors,
    InvalidType,
)

# Weights below this are treated as solver blow-up, not round-off.
NEG_CLAMP = -1e-15
# Tolerated drift of the total mass before renormalisation refuses.
MASS_TOL = 1e-12


@dataclass(frozen=True)
class TypeSpace:
    """A product of finite alphabets with one distinguished active site.

    Parameters
    ----------
    n : number of sites.
    alphabet_sizes : one integer >= 2 per site.
    active_site : the site through which selection and mutation couple
        to the nonlinearity; 1-based.
    """

    n: int
    alphabet_sizes: tuple[int, ...]
    active_site: int

    def __post_init__(self):
        if self.n < 1:
            raise InvalidArgument("need at least one site")
        sizes = tuple(int(k) for k in self.alphabet_sizes)
        object.__setattr__(self, "alphabet_sizes", sizes)
        if len(sizes) != self.n:
            raise InvalidArgument("alphabet_sizes must have one entry per site")
        if any(k < 2 for k in sizes):
            raise InvalidArgument("every alphabet needs at least two letters")
        if not 1 <= self.active_site <= self.n:
            raise InvalidArgument(f"active_site {self.active_site} outside 1..{self.n}")

    @classmethod
    def binary(cls, n: int, active_site: int = 1) -> "TypeSpace":
        return cls(n, (2,) * n, active_site)

    @property
    def sites(self) -> tuple[int, ...]:
        return tuple(range(1, self.n + 1))

    @property
    def size(self) -> int:
        return math.prod(self.alphabet_sizes)

    def site_size(self, i: int) -> int:
        return self.alphabet_sizes[i - 1]

    def subset_size(self, sites: Iterable[int]) -> int:
        return math.prod(self.site_size(i) for i in sites)

    def shape(self, sites: Sequence[int]) -> tuple[int, ...]:
        """Tensor shape for a weight vector on ``sites``: one axis per
        site in descending site order (ravels to the flat layout)."""
        return tuple(self.site_size(i) for i in sorted(sites, reverse=True))

    def encode(self, x: Sequence[int]) -> int:
        """Mixed-radix index of a full type tuple, site 1 least significant."""
        return self.encode_on(self.sites, x)

    def decode(self, index: int) -> tuple[int, ...]:
        return self.decode_on(self.sites, index)

    def encode_on(self, sites: Sequence[int], letters: Sequence[int]) -> int:
        sites = sorted(sites)
        if len(letters) != len(sites):
            raise InvalidType(f"expected {len(sites)} letters, got {len(letters)}")
        idx = 0
        radix = 1
        for site, letter in zip(sites, letters):
            k = self.site_size(site)
            if not 0 <= letter < k:
                raise InvalidType(f"letter {letter} out of range at site {site}")
            idx += letter * radix
            radix *= k
        return idx

    def decode_on(self, sites: Sequence[int], index: int) -> tuple[int, ...]:
        sites = sorted(sites)
        total = self.subset_size(sites)
        if not 0 <= index < total:
            raise InvalidType(f"index {index} out of range for {sites}")
        letters = []
        for site in sites:
            k = self.site_size(site)
            letters.append(index % k)
            index //= k
        return tuple(letters)

    def decode_table(self, sites: Sequence[int]) -> np.ndarray:
        """(subset_size, len(sites)) array of letter tuples in index order."""
        sites = sorted(sites)
        table = np.empty((self.subset_size(sites), len(sites)), dtype=np.int64)
        for idx in range(table.shape[0]):
            table[idx] = self.decode_on(sites, idx)
        return table


def index_encode(space: TypeSpace, x: Sequence[int]) -> int:
    return space.encode(x)


def index_decode(space: TypeSpace, index: int) -> tuple[int, ...]:
    return space.decode(index)


class _Measure:
    """Shared layout logic for probability and signed measures."""

    __slots__ = ("space", "sites", "weights")

    space: TypeSpace
    sites: tuple[int, ...]
    weights: np.ndarray

    def _init_layout(self, space: TypeSpace, sites: Iterable[int], weights) -> np.ndarray:
        sites = tuple(sorted(set(int(s) for s in sites)))
        if any(not 1 <= s <= space.n for s in sites):
            raise InvalidArgument(f"sites {sites} outside 1..{space.n}")
        w = np.array(weights, dtype=float)
        if w.ndim != 1 or w.shape[0] != space.subset_size(sites):
            raise InvalidDistribution(
                f"expected {space.subset_size(sites)} weights on sites {sites}, got shape {w.shape}"
            )
        self.space = space
        self.sites = sites
        return w

    def tensor(self) -> np.ndarray:
        return self.weights.reshape(self.space.shape(self.sites))

    def mass(self) -> float:
        return float(self.weights.sum())

    def __len__(self) -> int:
        return self.weights.shape[0]


class TypeDistribution(_Measure):
    """Dense probability vector on a site subset A (A may be empty).

    Weights are clamped at ``NEG_CLAMP`` (round-off) and renormalised;
    anything more negative, or mass off by more than ``MASS_TOL``, is an
    error.  Instances are immutable and safe to share.
    """

    def __init__(self, space, sites, weights, *, neg_tol: float = -NEG_CLAMP,
                 mass_tol: float = MASS_TOL):
        w = self._init_layout(space, sites, weights)
        lo = w.min() if w.size else 0.0
        if lo < -neg_tol:
            raise InvalidDistribution(f"weight {lo} below -{neg_tol}")
        if lo < 0.0:
            w = np.clip(w, 0.0, None)
        s = w.sum()
        if abs(s - 1.0) > mass_tol:
            raise InvalidDistribution(f"total mass {s} not 1 within {mass_tol}")
        if s != 1.0:
            w = w / s
        w.flags.writeable = False
        self.weights = w

    @classmethod
    def from_raw(cls, space, sites, weights, *, neg_tol: float, mass_tol: float):
        """Build from solver output with looser, caller-owned tolerances."""
        return cls(space, sites, weights, neg_tol=neg_tol, mass_tol=mass_tol)

    @classmethod
    def point_mass(cls, space: TypeSpace, x: Sequence[int], sites=None) -> "TypeDistribution":
        sites = space.sites if sites is None else tuple(sorted(sites))
        w = np.zeros(space.subset_size(sites))
        w[space.encode_on(sites, x)] = 1.0
        return cls(space, sites, w)

    @classmethod
    def uniform(cls, space: TypeSpace, sites=None) -> "TypeDistribution":
        sites = space.sites if sites is None else tuple(sorted(sites))
        m = space.subset_size(sites)
        return cls(space, sites, np.full(m, 1.0 / m))

    @classmethod
    def product_of_marginals(cls, space: TypeSpace, marginals: Sequence[Sequence[float]]) -> "TypeDistribution":
        """Full-space product measure from one marginal vector per site."""
        if len(marginals) != space.n:
            raise InvalidArgument("need one marginal per site")
        factors = [(
            (i,), cls(space, (i,), marginals[i - 1])
        ) for i in space.sites]
        return product_assemble(space, factors)

    def marginal(self, sites: Iterable[int]) -> "TypeDistribution":
        return marginal(self, sites)

    def tv(self, other: "TypeDistribution") -> float:
        return tv_distance(self, other)

    def sample(self, rng: np.random.Generator) -> tuple[int, ...]:
        return sample_type(self, rng)

    def __eq__(self, other):
        return (isinstance(other, TypeDistribution) and self.space == other.space
                and self.sites == other.sites
                and np.array_equal(self.weights, other.weights))

    def __repr__(self):
        return f"TypeDistribution(sites={self.sites}, weights={self.weights!r})"

    def to_json_dict(self) -> dict:
        return {"sites": list(self.sites), "weights": [float(w) for w in self.weights]}

    @classmethod
    def from_json_dict(cls, space: TypeSpace, d: dict) -> "TypeDistribution":
        return cls(space, d["sites"], d["weights"])

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    def to_csv(self, fh) -> None:
        """Rows of (index, letter tuple, weight) with 17 significant digits."""
        fh.write("index,tuple,weight\n")
        for idx, w in enumerate(self.weights):
            letters = self.space.decode_on(self.sites, idx)
            fh.write(f"{idx},{';'.join(map(str, letters))},{w:.17g}\n")


class SignedMeasure(_Measure):
    """Same dense layout as a distribution, weights of either sign.

    Used for vector-field outputs and ODE right-hand sides; total mass is
    reported, not constrained.
    """

    def __init__(self, space, sites, weights):
        w = self._init_layout(space, sites, weights)
        w.flags.writeable = False
        self.weights = w

    def marginal(self, sites: Iterable[int]) -> "SignedMeasure":
        return marginal(self, sites)

    def __repr__(self):
        return f"SignedMeasure(sites={self.sites}, mass={self.mass():.3g})"


def marginal_weights(space: TypeSpace, sites: tuple[int, ...], weights: np.ndarray,
                     keep: tuple[int, ...]) -> np.ndarray:
    """Sum a weight vector on ``sites`` down to ``keep`` (a subset)."""
    if keep == sites:
        return weights
    desc = tuple(sorted(sites, reverse=True))
    keep_set = set(keep)
    axes = tuple(a for a, s in enumerate(desc) if s not in keep_set)
    return weights.reshape(space.shape(sites)).sum(axis=axes).reshape(-1)


def batch_marginal_weights(space: TypeSpace, sites: tuple[int, ...], rows: np.ndarray,
                           keep: tuple[int, ...]) -> np.ndarray:
    """Row-wise marginal of a (R, subset_size) stack of weight vectors."""
    if keep == sites:
        return rows
    desc = tuple(sorted(sites, reverse=True))
    keep_set = set(keep)
    axes = tuple(1 + a for a, s in enumerate(desc) if s not in keep_set)
    shaped = rows.reshape((rows.shape[0],) + space.shape(sites))
    return shaped.sum(axis=axes).reshape(rows.shape[0], -1)


def marginal(nu, sites: Iterable[int]):
    """Marginal of ``nu`` with respect to ``nu.sites`` intersected with
    ``sites``; the empty intersection gives the point mass on the empty
    sequence (a length-1 weight vector)."""
    b = set(sites)
    keep = tuple(s for s in nu.sites if s in b)
    w = marginal_weights(nu.space, nu.sites, nu.weights, keep)
    if isinstance(nu, SignedMeasure):
        return SignedMeasure(nu.space, keep, w)
    return TypeDistribution(nu.space, keep, w)


def product_weights(space: TypeSpace, factors: list[tuple[tuple[int, ...], np.ndarray]]):
    """Raw product measure over the union of the (disjoint) factor site
    sets; returns (union_sites, weights)."""
    union: list[int] = []
    for sites, _ in factors:
        union.extend(sites)
    union_t = tuple(sorted(union))
    if len(union_t) != len(union):
        raise InvalidPartitionFactors("factor site sets overlap")
    shape = space.shape(union_t)
    desc = tuple(sorted(union_t, reverse=True))
    pos = {s: a for a, s in enumerate(desc)}
    out = np.ones((1,) * len(desc)) if desc else np.ones(())
    for sites, w in factors:
        fshape = [1] * len(desc)
        for s in sites:
            fshape[pos[s]] = space.site_size(s)
        out = out * w.reshape(space.shape(sites)).reshape(fshape)
    return union_t, np.asarray(out).reshape(-1) if desc else np.asarray(out).reshape(1)


def product_assemble(space: TypeSpace, factors) -> TypeDistribution:
    """Assemble a product measure with the given block marginals.

    ``factors`` is a list of (site subset, TypeDistribution) pairs (or
    bare distributions); the subsets must be pairwise disjoint and cover
    all sites of the space.
    """
    normed = []
    for f in factors:
        if isinstance(f, TypeDistribution):
            sites, dist = f.sites, f
        else:
            sites, dist = f
            sites = tuple(sorted(sites))
            if sites != dist.sites:
                raise InvalidPartitionFactors(
                    f"factor labelled {sites} but distribution lives on {dist.sites}")
        normed.append((sites, dist.weights))
    union, w = product_weights(space, normed)
    if union != space.sites:
        raise InvalidPartitionFactors(f"factors cover {union}, not all of 1..{space.n}")
    return TypeDistribution(space, union, w)


def recombinator_apply(nu: TypeDistribution, blocks) -> TypeDistribution:
    """Replace ``nu`` by the product of its marginals over the given
    blocks (a partition of the sites of ``nu``)."""
    factors = []
    for block in blocks:
        block = tuple(sorted(block))
        factors.append((block, marginal_weights(nu.space, nu.sites, nu.weights, block)))
    sites, w = product_weights(nu.space, factors)
    if sites != nu.sites:
        raise InvalidPartitionFactors("blocks do not partition the support sites")
    return TypeDistribution(nu.space, sites, w)


def tv_distance(mu, nu) -> float:
    """Total variation distance, half the l1 difference."""
    if mu.sites != nu.sites or mu.space != nu.space:
        raise IncompatibleSupports(f"{mu.sites} vs {nu.sites}")
    return 0.5 * float(np.abs(mu.weights - nu.weights).sum())


@dataclass(frozen=True)
class ActiveSplit:
    """Active-site conditioning of a distribution.

    ``fit_share`` is the probability of letter 0 at the active site;
    ``fit`` / ``unfit`` are the conditional distributions (``None`` when
    the conditioning event has probability zero).
    """

    fit_share: float
    fit: TypeDistribution | None
    unfit: TypeDistribution | None

    def mix(self) -> TypeDistribution:
        f = self.fit_share
        if self.fit is None:
            return self.unfit
        if self.unfit is None:
            return self.fit
        w = f * self.fit.weights + (1.0 - f) * self.unfit.weights
        return TypeDistribution(self.fit.space, self.fit.sites, w)


def condition_on_active(nu: TypeDistribution) -> ActiveSplit:
    """Split ``nu`` by the allele at the active site.

    Returns the share of letter 0 there and the two renormalised
    conditional distributions.
    """
    space = nu.space
    act = space.active_site
    if act not in nu.sites:
        raise InvalidArgument("distribution does not cover the active site")
    desc = tuple(sorted(nu.sites, reverse=True))
    ax = desc.index(act)
    tens = nu.tensor()
    fit_slice = np.zeros_like(tens)
    sl = [slice(None)] * tens.ndim
    sl[ax] = slice(0, 1)
    fit_slice[tuple(sl)] = tens[tuple(sl)]
    fit_w = fit_slice.reshape(-1)
    unfit_w = nu.weights - fit_w
    f = float(fit_w.sum())
    fit = None if f <= 0.0 else TypeDistribution(space, nu.sites, fit_w / f)
    unfit = None if f >= 1.0 else TypeDistribution(space, nu.sites, unfit_w / (1.0 - f))
    return ActiveSplit(f, fit, unfit)


def sample_type(nu: TypeDistribution, rng: np.random.Generator) -> tuple[int, ...]:
    """Inverse-CDF draw of a letter tuple on ``nu.sites``."""
    cdf = np.cumsum(nu.weights)
    idx = int(np.searchsorted(cdf, rng.random(), side="right"))
    idx = min(idx, len(nu.weights) - 1)
    return nu.space.decode_on(nu.sites, idx)


def sample_indices(weights: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Vectorised inverse-CDF sampling of flat indices from one weight row."""
    cdf = np.cumsum(weights)
    idx = np.searchsorted(cdf, uniforms, side="right")
    return np.minimum(idx, len(weights) - 1)


def random_distribution(space: TypeSpace, rng: np.random.Generator, sites=None,
                        concentration: float = 1.0) -> TypeDistribution:
    """Dirichlet-distributed dense distribution, strictly positive a.s."""
    sites = space.sites if sites is None else tuple(sorted(sites))
    w = rng.dirichlet(np.full(space.subset_size(sites), concentration))
    return TypeDistribution(space, sites, w)

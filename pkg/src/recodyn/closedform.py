"""Exact linear-algebra machinery for the active-site dynamics.

The selection projector keeps the weight of types carrying letter 0 at
the active site; the per-site mutation operator replaces the letter at a
binary site by a fresh draw from (m0, m1).  Both act matrix-free on
dense weight vectors (tensor reshapes), with dense materialisation
capped at 4096 states for tests.  ``expmv`` evaluates e^{tA} v for
entrywise nonnegative A by a scaled Taylor series with a certified tail
bound (no cancellation occurs, so plain summation is stable).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgument, SeriesOverflow, Unsupported
from .typespace import TypeDistribution, TypeSpace

DENSE_CAP = 4096
EXP_ARG_CAP = 700.0  # ln of the largest representable double, roughly


@dataclass(frozen=True)
class LinearOperator:
    """Matrix-free nonnegative operator on full-space weight vectors.

    ``colsum`` bounds the maximum column sum, which certifies the
    truncation error of the exponential series.
    """

    space: TypeSpace
    apply: Callable[[np.ndarray], np.ndarray]
    colsum: float

    def dense(self) -> np.ndarray:
        n = self.space.size
        if n > DENSE_CAP:
            raise Unsupported(f"dense materialisation capped at {DENSE_CAP} states")
        out = np.empty((n, n))
        basis = np.zeros(n)
        for j in range(n):
            basis[j] = 1.0
            out[:, j] = self.apply(basis)
            basis[j] = 0.0
        return out


def _site_axis(space: TypeSpace, site: int) -> int:
    return space.n - site  # axes are in descending site order


def selection_projector(space: TypeSpace) -> LinearOperator:
    """Diagonal 0/1 operator keeping types with letter 0 at the active
    site; its l1 norm of the image is the fit frequency."""
    if space.site_size(space.active_site) != 2:
        raise Unsupported("selection needs a binary active site")
    ax = _site_axis(space, space.active_site)
    shape = space.shape(space.sites)
    mask = np.zeros(shape)
    sl = [slice(None)] * len(shape)
    sl[ax] = slice(0, 1)
    mask[tuple(sl)] = 1.0
    mask = mask.reshape(-1)

    def apply(w: np.ndarray) -> np.ndarray:
        return w * mask

    return LinearOperator(space, apply, 1.0)


def site_mutation_operator(space: TypeSpace, site: int, m0: float, m1: float) -> LinearOperator:
    """Column-stochastic idempotent operator resampling the letter at a
    binary site from (m0, m1)."""
    if space.site_size(site) != 2:
        raise Unsupported("mutation operators require a binary site")
    if abs(m0 + m1 - 1.0) > 1e-12 or m0 < 0 or m1 < 0:
        raise InvalidArgument("mutation target probabilities must be a distribution")
    ax = _site_axis(space, site)
    shape = space.shape(space.sites)
    targets = np.array([m0, m1])
    tshape = [1] * len(shape)
    tshape[ax] = 2

    def apply(w: np.ndarray) -> np.ndarray:
        t = w.reshape(shape)
        tot = t.sum(axis=ax, keepdims=True)
        return (tot * targets.reshape(tshape)).reshape(-1)

    return LinearOperator(space, apply, 1.0)


def operator_sum(terms: Sequence[tuple[float, LinearOperator]]) -> LinearOperator:
    """Nonnegative linear combination sum_k c_k A_k."""
    terms = [(float(c), op) for c, op in terms if c != 0.0]
    if any(c < 0 for c, _ in terms):
        raise InvalidArgument("nonnegative combinations only")
    if not terms:
        space = None
        raise InvalidArgument("empty operator sum")
    space = terms[0][1].space

    def apply(w: np.ndarray) -> np.ndarray:
        out = np.zeros_like(w)
        for c, op in terms:
            out += c * op.apply(w)
        return out

    return LinearOperator(space, apply, sum(c * op.colsum for c, op in terms))


def expmv(op: LinearOperator, t: float, v: np.ndarray, tol: float = 1e-14) -> np.ndarray:
    """e^{tA} v for nonnegative A and v, certified to ``tol`` relatively.

    Time is split so each Taylor stage has t ||A||_1 <= 1; within a
    stage, the geometric tail bound ||term_j|| * r / (1 - r) with
    r = dt ||A||_1 / (j + 1) certifies truncation.  All quantities are
    nonnegative, so norms are exact sums and no cancellation occurs.
    """
    if t < 0:
        raise InvalidArgument("nonnegative time only")
    v = np.asarray(v, dtype=float)
    if v.size and v.min() < 0:
        raise InvalidArgument("expmv expects nonnegative input vectors")
    if t * op.colsum > EXP_ARG_CAP:
        raise SeriesOverflow(
            f"t*||A|| = {t * op.colsum:.3g} too large for a direct series; "
            "split the interval and renormalise between pieces")
    if t == 0.0:
        return v.copy()
    stages = max(1, math.ceil(t * op.colsum))
    dt = t / stages
    w = v.copy()
    for _ in range(stages):
        acc = w.copy()
        term = w
        j = 0
        while True:
            j += 1
            term = (dt / j) * op.apply(term)
            acc += term
            r = dt * op.colsum / (j + 1)
            if r < 1.0:
                tail = float(term.sum()) * r / (1.0 - r)
                if tail <= tol * float(acc.sum()):
                    break
            if j > 400:
                raise SeriesOverflow("exponential series failed to converge")
        w = acc
    return w


class ActiveSiteFlow:
    """Normalised flow of selection plus mutation at the active site.

    Evaluates the matrix exponential of s F + u M at the active site and
    renormalises the total mass afterwards, never during.  Long horizons
    are split into unit-scale chunks with renormalisation between chunks
    (exact, by the semigroup property of the normalised flow).
    """

    def __init__(self, space: TypeSpace, s: float, u: float, m0: float = 0.5, m1: float = 0.5):
        if s < 0 or u < 0:
            raise InvalidArgument("rates must be nonnegative")
        self.space = space
        self.s = float(s)
        self.u = float(u)
        terms = []
        if s > 0:
            terms.append((s, selection_projector(space)))
        if u > 0:
            terms.append((u, site_mutation_operator(space, space.active_site, m0, m1)))
        self._op = operator_sum(terms) if terms else None

    @property
    def rate_scale(self) -> float:
        return self.s + self.u

    def _step_weights(self, w: np.ndarray, dt: float) -> np.ndarray:
        if self._op is None or dt == 0.0:
            return w
        out = expmv(self._op, dt, w)
        return out / out.sum()

    def evaluate(self, nu: TypeDistribution, t: float) -> TypeDistribution:
        if t < 0:
            raise InvalidArgument("nonnegative time only")
        w = nu.weights
        if self._op is not None:
            chunk = 50.0 / max(self.rate_scale, 1e-12)
            left = t
            while left > 0:
                dt = min(left, chunk)
                w = self._step_weights(w, dt)
                left -= dt
        return TypeDistribution.from_raw(self.space, nu.sites, w, neg_tol=1e-13, mass_tol=1e-9)

    def batch(self, nu: TypeDistribution, ts: np.ndarray) -> np.ndarray:
        """Flow weights at every requested time, one row per entry.

        Times are deduplicated and visited in increasing order; each
        step advances from the previous time, so the total cost is one
        pass regardless of how many times are requested.
        """
        ts = np.asarray(ts, dtype=float)
        uniq, inverse = np.unique(ts, return_inverse=True)
        if uniq.size and uniq[0] < 0:
            raise InvalidArgument("nonnegative times only")
        rows = np.empty((uniq.size, len(nu)))
        w = nu.weights
        prev = 0.0
        for k, tk in enumerate(uniq):
            w = self._step_weights(w, tk - prev)
            rows[k] = w
            prev = tk
        return rows[inverse].reshape(ts.shape + (len(nu),))


def envelope_site_matrix(t: float, u: float, m0: float, m1: float) -> np.ndarray:
    """2x2 closed form of e^{t u (M - id)} at one binary site.

    M is idempotent, so the exponential collapses to
    id + (1 - e^{-ut}) (M - id); columns remain stochastic.
    """
    c = -math.expm1(-u * t)  # 1 - e^{-ut}, accurate for small ut
    return np.array([[1.0 - c + c * m0, c * m0],
                     [c * m1, 1.0 - c + c * m1]])


def apply_site_matrix(space: TypeSpace, sites: tuple[int, ...], w: np.ndarray,
                      site: int, mat: np.ndarray) -> np.ndarray:
    """Apply a small per-letter matrix along one site axis of a weight
    vector living on ``sites``."""
    desc = tuple(sorted(sites, reverse=True))
    ax = desc.index(site)
    t = w.reshape(space.shape(sites))
    t = np.tensordot(mat, t, axes=([1], [ax]))
    t = np.moveaxis(t, 0, ax)
    return np.ascontiguousarray(t).reshape(-1)


def mutation_envelope(nu: TypeDistribution, t: float, u: dict[int, float],
                      m0: dict[int, float], m1: dict[int, float]) -> TypeDistribution:
    """Independent per-site mutation applied for duration t at the given
    sites (commuting sitewise factors; probability preserved exactly)."""
    w = nu.weights
    for site, rate in sorted(u.items()):
        if rate == 0.0:
            continue
        if site not in nu.sites:
            raise InvalidArgument(f"site {site} not in the support of the distribution")
        mat = envelope_site_matrix(t, rate, m0[site], m1[site])
        w = apply_site_matrix(nu.space, nu.sites, w, site, mat)
    return TypeDistribution.from_raw(nu.space, nu.sites, w, neg_tol=1e-12, mass_tol=1e-9)


def smr_solve(omega0: TypeDistribution, t: float, scenario, grid: int = 512) -> TypeDistribution:
    """Closed-form route for a full selection-mutation-recombination
    scenario: iterated-integral recursion driven by the matrix-exponential
    active-site flow, then the off-active mutation envelope.

    Requires binary alphabets and single-crossover rates.
    """
    from .recursion import SiteOrdering, truncated_levels

    space = scenario.space()
    if not scenario.rates().is_single_crossover:
        raise Unsupported("closed-form route requires single-crossover rates")
    if any(k != 2 for k in space.alphabet_sizes):
        raise Unsupported("closed-form route requires binary alphabets")
    flow = ActiveSiteFlow(space, scenario.s, scenario.u_at(space.active_site),
                          scenario.m0_at(space.active_site), scenario.m1_at(space.active_site))
    ordering = scenario.site_ordering()
    bullet = truncated_levels(
        omega0, t, field=scenario.active_field(), rates=scenario.rates(),
        ordering=ordering, grid=grid, base_flow=flow)
    off = {i: scenario.u_at(i) for i in space.sites if i != space.active_site}
    return mutation_envelope(
        bullet, t, off,
        {i: scenario.m0_at(i) for i in off}, {i: scenario.m1_at(i) for i in off})

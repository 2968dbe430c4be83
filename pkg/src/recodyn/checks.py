"""Numerical checks of the structural hypotheses behind the fast routes.

Both the vector field and the dual maps h(., y) must (a) preserve
products split off the active site, acting only on the factor containing
it, and (b) act linearly on mixtures sharing the active-site marginal.
The checkers measure the worst observed defect of both properties over
randomised inputs, in half-l1 distance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .typespace import (
    TypeDistribution,
    TypeSpace,
    marginal_weights,
    product_weights,
    random_distribution,
)


@dataclass(frozen=True)
class AssumptionReport:
    """Worst-case defects of the two structural hypotheses."""

    split_defect: float
    mixture_defect: float
    trials: int
    tol: float

    @property
    def max_defect(self) -> float:
        return max(self.split_defect, self.mixture_defect)

    @property
    def passed(self) -> bool:
        return self.max_defect <= self.tol

    def to_json_dict(self) -> dict:
        return {
            "split_defect": self.split_defect,
            "mixture_defect": self.mixture_defect,
            "trials": self.trials,
            "tol": self.tol,
            "passed": self.passed,
        }


def random_head_split(space: TypeSpace, rng: np.random.Generator):
    """A random two-block split (C, D) with the active site in C."""
    others = [i for i in space.sites if i != space.active_site]
    d = tuple(sorted(i for i in others if rng.random() < 0.5))
    while not d:
        d = tuple(sorted(i for i in others if rng.random() < 0.5))
    c = tuple(sorted(set(space.sites) - set(d)))
    return c, d


def random_product_pair(space: TypeSpace, rng: np.random.Generator):
    """(C, D, nu_C, nu_D, nu_C x nu_D) with the active site in C."""
    c, d = random_head_split(space, rng)
    nu_c = random_distribution(space, rng, sites=c)
    nu_d = random_distribution(space, rng, sites=d)
    _, w = product_weights(space, [(c, nu_c.weights), (d, nu_d.weights)])
    return c, d, nu_c, nu_d, TypeDistribution(space, space.sites, w)


def random_equal_active_mixture(space: TypeSpace, rng: np.random.Generator):
    """Two random distributions with identical active-site marginal and a
    random mixing weight."""
    act = space.active_site
    mu = random_distribution(space, rng)
    raw = random_distribution(space, rng)
    f_mu = marginal_weights(space, space.sites, mu.weights, (act,))
    f_raw = marginal_weights(space, space.sites, raw.weights, (act,))
    desc = tuple(sorted(space.sites, reverse=True))
    shape = [1] * space.n
    shape[desc.index(act)] = space.site_size(act)
    scale = (f_mu / f_raw).reshape(shape)
    w2 = (raw.weights.reshape(space.shape(space.sites)) * scale).reshape(-1)
    mu2 = TypeDistribution(space, space.sites, w2)
    return mu, mu2, float(rng.uniform(0.05, 0.95))


def split_defect_sample(phi: Callable[[TypeDistribution], np.ndarray],
                        space: TypeSpace, rng: np.random.Generator) -> float:
    """One randomised defect of the product-preservation property."""
    c, d, _, nu_d, nu = random_product_pair(space, rng)
    out = phi(nu)
    out_c = marginal_weights(space, space.sites, out, c)
    _, rhs = product_weights(space, [(c, out_c), (d, nu_d.weights)])
    return 0.5 * float(np.abs(out - rhs).sum())


def mixture_defect_sample(phi: Callable[[TypeDistribution], np.ndarray],
                          space: TypeSpace, rng: np.random.Generator) -> float:
    """One randomised defect of linearity on equal-active-marginal mixtures."""
    mu, mu2, alpha = random_equal_active_mixture(space, rng)
    mix = TypeDistribution(space, space.sites,
                           alpha * mu.weights + (1 - alpha) * mu2.weights)
    lhs = phi(mix)
    rhs = alpha * phi(mu) + (1 - alpha) * phi(mu2)
    return 0.5 * float(np.abs(lhs - rhs).sum())


def map_assumption_report(phi: Callable[[TypeDistribution], np.ndarray],
                          space: TypeSpace, trials: int, tol: float,
                          rng: np.random.Generator) -> AssumptionReport:
    """Defect report for a map from distributions to weight vectors on
    the full site set (vector-field or dual-map evaluations)."""
    if trials < 1:
        raise ValueError("need at least one trial")
    worst_split = 0.0
    worst_mix = 0.0
    for _ in range(trials):
        worst_split = max(worst_split, split_defect_sample(phi, space, rng))
        worst_mix = max(worst_mix, mixture_defect_sample(phi, space, rng))
    return AssumptionReport(worst_split, worst_mix, trials, tol)

"""Recombination dynamics with selection and mutation.

Four independent solution routes for the same forward dynamics on a
finite sequence space: direct ODE integration, an iterated-integral
recursion, a matrix-exponential closed form, and two genealogical Monte
Carlo estimators, with a harness that cross-validates them.
"""

from .ancestry import AncestryGraph, propagate, sample_graph, sample_marks
from .checks import AssumptionReport
from .closedform import (
    ActiveSiteFlow,
    expmv,
    mutation_envelope,
    selection_projector,
    site_mutation_operator,
    smr_solve,
)
from .dynamics import (
    DriftFlow,
    OdeConfig,
    SelectionMutationField,
    check_field_assumptions,
    ode_solve,
    rhs_eval,
)
from .glpp import GLPPState, MCEstimate, duality_product, estimate as glpp_estimate, simulate
from .labels import (
    ClockLabels,
    MutationFlags,
    SiteProcess,
    YuleLabels,
    check_dual_assumptions,
)
from .partitions import (
    DELTA,
    LabelledPartition,
    Partition,
    RecombinationRates,
    boxwedge,
    decode_site_labels,
    encode_site_labels,
    precedes,
    resetting_rate,
    split_pair,
)
from .recursion import SiteOrdering, recursion_convergence, truncated_levels, truncated_solve
from .scenario import Scenario, parse_scenario, scenario_from_dict
from .typespace import (
    SignedMeasure,
    TypeDistribution,
    TypeSpace,
    condition_on_active,
    marginal,
    product_assemble,
    recombinator_apply,
    sample_type,
    tv_distance,
)
from .validate import ValidationReport, run_validate

__version__ = "0.1.0"

__all__ = [
    "ActiveSiteFlow", "AncestryGraph", "AssumptionReport", "ClockLabels",
    "DELTA", "DriftFlow", "GLPPState", "LabelledPartition", "MCEstimate",
    "MutationFlags", "OdeConfig", "Partition", "RecombinationRates",
    "Scenario", "SelectionMutationField", "SignedMeasure", "SiteOrdering",
    "SiteProcess", "TypeDistribution", "TypeSpace", "ValidationReport",
    "YuleLabels", "boxwedge", "check_dual_assumptions",
    "check_field_assumptions", "condition_on_active", "decode_site_labels",
    "duality_product", "encode_site_labels", "expmv", "glpp_estimate",
    "marginal", "mutation_envelope", "ode_solve", "parse_scenario",
    "precedes", "product_assemble", "propagate", "recombinator_apply",
    "recursion_convergence", "resetting_rate", "rhs_eval", "run_validate",
    "sample_graph", "sample_marks", "sample_type", "scenario_from_dict",
    "selection_projector", "simulate", "site_mutation_operator",
    "smr_solve", "split_pair", "truncated_levels", "truncated_solve",
    "tv_distance",
]

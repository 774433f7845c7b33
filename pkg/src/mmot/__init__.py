"""Multimarginal optimal transport with repulsive pair costs.

Exact and entropic solvers for discrete marginals, Kantorovich potentials,
and verifiers for the support, cost and regularity estimates.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .costs import PowerLawCost, RepulsiveCost, TabulatedCost, alpha_star, cost_from_descriptor, pairwise_cost
from .duality import (
    PotentialSet,
    c_transform,
    canonicalize,
    check_complementary_slackness,
    dual_violation,
    extend_potential,
    normalize_at_support,
    solve_dual,
)
from .errors import BudgetExceeded, DomainError, MMOTError, PreconditionError, SeparationFailure, SolverError
from .measures import (
    DiscreteMeasure,
    HistogramDensity,
    bounded_lipschitz_distance,
    has_small_concentration,
    concentration,
    find_beta,
    histogram_lp_norm,
    l1_distance,
)
from .solver import (
    SolveResult,
    TransportPlan,
    brute_force_assignment,
    min_interparticle_gap,
    select_separated_points,
    solve_entropic,
    solve_exact,
)

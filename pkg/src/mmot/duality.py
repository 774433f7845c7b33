"""Kantorovich potentials for the symmetric multimarginal problem.

A potential is one value per atom; it is feasible when
``u(a_1) + ... + u(a_N) <= c(a_1, ..., a_N)`` for all atom tuples, and its
objective is ``N * sum_a w(a) u(a)``.  Canonical potentials are fixed points
of the inf-convolution map and extend to all of R^d by the same formula.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from . import _kernels
from .costs import RepulsiveCost, cost_tensor, pair_matrix, pairwise_cost
from .errors import DomainError, PreconditionError, SolverError
from .measures import DiscreteMeasure, has_small_concentration
from .solver import _HIGHS_OPTIONS, TransportPlan

FEASIBILITY_TOL = 1e-9
CANONICAL_TOL = 1e-10
CANONICAL_MAX_ITER = 10_000
SLACKNESS_TOL = 1e-7


@lru_cache(maxsize=64)
def multisets(m: int, k: int) -> np.ndarray:
    """Nondecreasing index tuples of length ``k`` over ``range(m)``."""
    out = np.array(list(itertools.combinations_with_replacement(range(m), k)), dtype=np.intp).reshape(-1, k)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class PotentialSet:
    marginal: DiscreteMeasure
    N: int
    u: np.ndarray
    tuple: Optional[np.ndarray] = None
    canonical: bool = False
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        u = np.array(self.u, dtype=float).reshape(-1)
        if len(u) != self.marginal.size:
            raise DomainError("one potential value per atom is required")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)
        if self.tuple is not None:
            t = np.array(self.tuple, dtype=float).reshape(self.N, -1)
            if np.abs(t.mean(axis=0) - u).max() > 1e-9:
                raise DomainError("the N-tuple must average to the symmetric potential")
            t.setflags(write=False)
            object.__setattr__(self, "tuple", t)

    @property
    def objective(self) -> float:
        return float(self.N * (self.marginal.weights @ self.u))

    def to_json(self) -> dict:
        return {
            "atoms": self.marginal.to_json()["atoms"],
            "u": [float(v) for v in self.u],
            "tuple": None if self.tuple is None else [[float(v) for v in row] for row in self.tuple],
            "canonical": bool(self.canonical),
            "objective": self.objective,
        }


def dual_violation(pot: PotentialSet, cost: RepulsiveCost) -> float:
    """Largest ``sum_i u(a_i) - c(a)`` over atom tuples (<= 0 means feasible)."""
    idx = multisets(pot.marginal.size, pot.N)
    phi = pair_matrix(cost, pot.marginal.positions, pot.marginal.positions, cost.truncation is not None)
    c = np.zeros(len(idx))
    for i, j in itertools.combinations(range(pot.N), 2):
        c = c + phi[idx[:, i], idx[:, j]]
    return float((pot.u[idx].sum(axis=1) - c).max())


def make_feasible(pot: PotentialSet, cost: RepulsiveCost) -> PotentialSet:
    """Shift down uniformly by the worst violation (no-op when feasible)."""
    v = dual_violation(pot, cost)
    if v <= 0:
        return pot
    return replace(pot, u=pot.u - v / pot.N, tuple=None, canonical=False)


def solve_dual(rho: DiscreteMeasure, N: int, cost: RepulsiveCost) -> PotentialSet:
    """Maximise ``N sum w u`` subject to ``sum_i u(a_i) <= c_alpha(a)``.

    One constraint per multiset of atoms (the cost is symmetric).  The LP's
    own dual is a symmetric plan; its cost minus our objective is reported
    as ``info["gap"]``.
    """
    if cost.truncation is None:
        raise PreconditionError("solve_dual needs a truncated cost; transfer the potential afterwards")
    if not has_small_concentration(rho, N):
        warnings.warn("measure violates the small-concentration assumption", RuntimeWarning)
    m = rho.size
    idx = multisets(m, N)
    M = len(idx)
    counts = sp.csr_matrix(
        (np.ones(M * N), (np.repeat(np.arange(M), N), idx.reshape(-1))), shape=(M, m)
    )  # duplicate entries are summed
    phi = pair_matrix(cost, rho.positions, rho.positions, True)
    c = np.zeros(M)
    for i, j in itertools.combinations(range(N), 2):
        c = c + phi[idx[:, i], idx[:, j]]
    res = linprog(-N * rho.weights, A_ub=counts, b_ub=c, bounds=(None, None), method="highs-ds",
                  options=_HIGHS_OPTIONS)
    if res.status == 3:
        raise AssertionError("dual LP unbounded, impossible for a bounded cost")
    if res.status != 0:
        raise SolverError(f"dual LP failed (status {res.status}): {res.message}")
    u = np.asarray(res.x, dtype=float)
    violation = float((counts @ u - c).max())
    if violation > 0:
        u = u - violation / N
    lam = np.clip(-np.asarray(res.ineqlin.marginals, dtype=float), 0.0, None)
    plan_value = float(lam @ c)
    pot = PotentialSet(rho, N, u, info={})
    pot.info.update(
        {
            "gap": plan_value - pot.objective,
            "violation_before_shift": max(violation, 0.0),
            "plan_marginal_residual": float(np.abs(counts.T @ lam - N * rho.weights).max()),
        }
    )
    return pot


def _inner_terms(phi_yy, u, idx):
    """``sum_{j<l} phi(y_j, y_l) - sum_j u(y_j)`` for every competitor tuple."""
    inner = np.zeros(len(idx))
    k = idx.shape[1]
    for a, b in itertools.combinations(range(k), 2):
        inner = inner + phi_yy[idx[:, a], idx[:, b]]
    for a in range(k):
        inner = inner - u[idx[:, a]]
    return inner


def c_transform(pot: PotentialSet, cost: RepulsiveCost, points=None, return_tuples=False):
    """``inf_y c(x, y_2, ..., y_N) - sum_j u(y_j)`` over atom tuples ``y``.

    Evaluated at the atoms when ``points`` is None.
    """
    rho = pot.marginal
    truncated = cost.truncation is not None
    phi_yy = pair_matrix(cost, rho.positions, rho.positions, truncated)
    if points is None:
        phi_xy = phi_yy
    else:
        points = np.asarray(points, dtype=float).reshape(-1, rho.dimension)
        phi_xy = pair_matrix(cost, points, rho.positions, truncated)
    idx = multisets(rho.size, pot.N - 1)
    values, arg = _kernels.tuple_min(phi_xy, idx, _inner_terms(phi_yy, pot.u, idx))
    if return_tuples:
        return values, idx[arg]
    return values


def canonicalize(pot: PotentialSet, cost: RepulsiveCost, tol: float = CANONICAL_TOL,
                 max_iter: int = CANONICAL_MAX_ITER) -> PotentialSet:
    """Iterate ``u <- (u_bar + (N-1) u) / N`` with ``u_bar`` the c-transform.

    Each step keeps feasibility and can only raise ``u``.  Stops when the
    sup-norm change drops below ``tol``; ``info["fixed_point_residual"]`` is
    the change produced by one further step.
    """
    viol = dual_violation(pot, cost)
    if viol > FEASIBILITY_TOL:
        raise PreconditionError(f"potential violates the constraints by {viol:.3e}")
    N = pot.N
    u = np.array(pot.u)
    change = math.inf
    it = 0
    while it < max_iter:
        it += 1
        ubar = c_transform(replace(pot, u=u, tuple=None), cost)
        new = (ubar + (N - 1) * u) / N
        change = float(np.abs(new - u).max())
        u = new
        if change <= tol:
            break
    converged = change <= tol
    if not converged:
        warnings.warn(f"canonicalization stopped after {it} steps, change {change:.3e}", RuntimeWarning)
    ubar = c_transform(replace(pot, u=u, tuple=None), cost)
    residual = float(np.abs((ubar + (N - 1) * u) / N - u).max())
    info = {"iterations": it, "converged": converged, "fixed_point_residual": residual,
            "cost": cost.descriptor()}
    return PotentialSet(pot.marginal, N, u, None, converged, info)


def extend_potential(pot: PotentialSet, cost: RepulsiveCost, x) -> float | np.ndarray:
    """Value of the inf-convolution extension at ``x`` (one point or an array of points)."""
    x = np.asarray(x, dtype=float)
    d = pot.marginal.dimension
    single = x.ndim == 0 or (x.ndim == 1 and x.shape[0] == d)
    values = c_transform(pot, cost, x.reshape(-1, d))
    return float(values[0]) if single else values


def check_complementary_slackness(plan: TransportPlan, pot: PotentialSet, cost: RepulsiveCost,
                                  threshold: float = 1e-9, tol: float = SLACKNESS_TOL) -> dict:
    """Residuals ``c(z) - sum_i u(z_i)`` on the support of the plan."""
    if plan.marginal is not pot.marginal and plan.marginal.digest() != pot.marginal.digest():
        raise DomainError("plan and potential live on different measures")
    vals = plan.cost_values(cost)
    sums = pot.u[plan.indices].sum(axis=1)
    residuals = vals - sums
    heavy = plan.weights > threshold
    weighted = float(plan.weights @ residuals)
    dual_on_plan = float(np.sum(plan.marginals() @ pot.u))
    max_res = float(np.abs(residuals[heavy]).max()) if heavy.any() else 0.0
    return {
        "max_residual": max_res,
        "weighted_residual": weighted,
        "primal_minus_dual": plan.cost(cost) - dual_on_plan,
        "entries": int(heavy.sum()),
        "pass": bool(max_res <= tol),
    }


def tuple_from_symmetric(pot: PotentialSet, shifts, cost: Optional[RepulsiveCost] = None) -> PotentialSet:
    """N-tuple ``u_i = u + shift_i`` with zero-sum shifts; same total objective."""
    shifts = np.asarray(shifts, dtype=float).reshape(-1)
    if len(shifts) != pot.N:
        raise DomainError(f"need {pot.N} shifts")
    if abs(shifts.sum()) > 1e-12:
        raise DomainError(f"shifts sum to {shifts.sum():.3e}, not 0")
    tup = pot.u[None, :] + shifts[:, None]
    if cost is not None:
        C = cost_tensor(cost, pot.marginal.positions, pot.N, cost.truncation is not None)
        total = np.zeros_like(C)
        for i in range(pot.N):
            shape = [1] * pot.N
            shape[i] = -1
            total = total + tup[i].reshape(shape)
        viol = float((total - C).max())
        if viol > FEASIBILITY_TOL:
            raise DomainError(f"shifted tuple violates the constraints by {viol:.3e}")
    info = dict(pot.info)
    info["shifts"] = shifts.tolist()
    return replace(pot, tuple=tup, info=info)


def normalize_at_support(pot: PotentialSet, plan: TransportPlan, cost: RepulsiveCost, z=None) -> PotentialSet:
    """Choose shifts so that ``u_i(z_i) = c(z)/N`` at a support tuple ``z``.

    By default ``z`` is the heaviest entry of the plan (first in
    lexicographic order on ties).  The complementary slackness residual at
    ``z`` is spread evenly so the shifts sum to zero exactly.
    """
    if z is None:
        z = plan.indices[int(np.argmax(plan.weights))]
    z = np.asarray(z, dtype=np.intp)
    cz = pairwise_cost(cost, pot.marginal.positions[z], truncated=cost.truncation is not None)
    shifts = cz / pot.N - pot.u[z]
    shifts = shifts - shifts.mean()
    out = tuple_from_symmetric(pot, shifts)
    out.info["normalized_at"] = [int(i) for i in z]
    out.info["slackness_at_normalization"] = float(cz - pot.u[z].sum())
    return out

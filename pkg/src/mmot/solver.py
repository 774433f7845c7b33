"""Exact, entropic and brute-force solvers for symmetric multimarginal transport.

All N marginals equal the same discrete measure.  Plans live on index tuples
into the atoms of that measure and are stored sparsely.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.special import logsumexp

from .costs import RepulsiveCost, cost_tensor, pair_matrix
from .errors import BudgetExceeded, DomainError, PreconditionError, SeparationFailure, SolverError
from .measures import DiscreteMeasure, assumption_threshold, concentration, concentration_upper

DEFAULT_BUDGET = 2_000_000
SUPPORT_THRESHOLD = 1e-9
GAP_RTOL = 1e-8
MARGINAL_TOL = 1e-9
MASS_TOL = 1e-12

_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Sparse nonnegative weights on N-tuples of atom indices.

    Entries are kept in lexicographic order of their index tuples.
    """

    marginal: DiscreteMeasure
    N: int
    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp).reshape(-1, self.N)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(idx) != len(w):
            raise DomainError("indices and weights differ in length")
        if np.any(w < 0):
            raise DomainError("plan weights must be nonnegative")
        if len(idx) and (idx.min() < 0 or idx.max() >= self.marginal.size):
            raise DomainError("plan index out of range")
        if len(idx):
            order = np.lexsort(idx.T[::-1])
            idx, w = idx[order], w[order]
        idx.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_dense(cls, marginal, tensor, drop_below=0.0):
        tensor = np.asarray(tensor)
        N = tensor.ndim
        flat = tensor.reshape(-1)
        keep = np.flatnonzero(flat > drop_below)
        idx = np.array(np.unravel_index(keep, tensor.shape)).T.reshape(-1, N)
        return cls(marginal, N, idx, flat[keep])

    @classmethod
    def from_entries(cls, marginal, entries: dict):
        N = len(next(iter(entries)))
        return cls(marginal, N, np.array(list(entries.keys())), np.array(list(entries.values())))

    @property
    def entries(self) -> dict:
        return {tuple(int(i) for i in z): float(w) for z, w in zip(self.indices, self.weights)}

    def total_mass(self) -> float:
        return float(self.weights.sum())

    def marginals(self) -> np.ndarray:
        m = self.marginal.size
        out = np.zeros((self.N, m))
        for i in range(self.N):
            np.add.at(out[i], self.indices[:, i], self.weights)
        return out

    def marginal_residual(self) -> float:
        return float(np.abs(self.marginals() - self.marginal.weights).max())

    def check(self, marginal_tol=MARGINAL_TOL, mass_tol=MASS_TOL):
        """Raise ``AssertionError`` unless the plan couples N copies of its marginal."""
        res = self.marginal_residual()
        if res > marginal_tol:
            raise AssertionError(f"marginal residual {res:.3e} exceeds {marginal_tol:.1e}")
        mass = self.total_mass()
        if abs(mass - 1.0) > mass_tol:
            raise AssertionError(f"total mass {mass!r} differs from 1 by more than {mass_tol:.1e}")
        return self

    def support(self, threshold=0.0):
        """Index tuples carrying more than ``threshold`` times the total mass."""
        return self.indices[self.weights > threshold * self.total_mass()]

    def tuple_positions(self, z) -> np.ndarray:
        return self.marginal.positions[np.asarray(z, dtype=np.intp)]

    def cost_values(self, cost: RepulsiveCost) -> np.ndarray:
        """N-body cost of every stored entry (truncated iff the cost is)."""
        phi = pair_matrix(cost, self.marginal.positions, self.marginal.positions, cost.truncation is not None)
        total = np.zeros(len(self.indices))
        for i, j in itertools.combinations(range(self.N), 2):
            total = total + phi[self.indices[:, i], self.indices[:, j]]
        return total

    def cost(self, cost: RepulsiveCost) -> float:
        vals = self.cost_values(cost)
        pos = self.weights > 0
        if np.any(np.isinf(vals[pos])):
            return math.inf
        return float(self.weights[pos] @ vals[pos])

    def symmetrized(self) -> "TransportPlan":
        """Average over the N! permutations of the coordinates."""
        acc = {}
        perms = list(itertools.permutations(range(self.N)))
        for z, w in zip(self.indices, self.weights):
            for p in perms:
                key = tuple(int(z[k]) for k in p)
                acc[key] = acc.get(key, 0.0) + w / len(perms)
        return TransportPlan.from_entries(self.marginal, acc)

    def to_json(self) -> dict:
        return {
            "N": self.N,
            "atoms": self.marginal.to_json()["atoms"],
            "entries": [{"indices": [int(i) for i in z], "weight": float(w)} for z, w in zip(self.indices, self.weights)],
        }


@dataclass
class SolveResult:
    """Outcome of a solve: plan, value and the evidence backing it."""

    plan: Optional[TransportPlan]
    value: float
    method: str
    primal_residual: float = 0.0
    duality_gap: Optional[float] = None
    certified: bool = False
    dual: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"N": None, "atoms": None, "entries": []}
        if self.plan is not None:
            out.update(self.plan.to_json())
        out.update(
            {
                "value": self.value,
                "method": self.method,
                "residuals": {
                    "primal": self.primal_residual,
                    "duality_gap": self.duality_gap,
                    "certified": self.certified,
                    **{k: v for k, v in self.info.items() if isinstance(v, (int, float, str, bool)) or v is None},
                },
            }
        )
        return out


def _index_tuples(m, N):
    return np.array(np.unravel_index(np.arange(m**N), (m,) * N)).T.reshape(-1, N)


def _marginal_matrix(idx, m, N):
    n = len(idx)
    rows = (idx + m * np.arange(N)).T.reshape(-1)
    cols = np.tile(np.arange(n), N)
    return sp.csr_matrix((np.ones(N * n), (rows, cols)), shape=(N * m, n))


def _certify_infeasible(A, b):
    """Phase-one LP; a positive optimum proves the marginal system infeasible."""
    k, n = A.shape
    A1 = sp.hstack([A, sp.identity(k, format="csr"), -sp.identity(k, format="csr")], format="csr")
    c1 = np.concatenate([np.zeros(n), np.ones(2 * k)])
    res = linprog(c1, A_eq=A1, b_eq=b, bounds=(0, None), method="highs-ds", options=_HIGHS_OPTIONS)
    if res.status != 0:
        raise SolverError(f"phase-one LP failed: {res.message}")
    return float(res.fun)


def solve_exact(rho: DiscreteMeasure, N: int, cost: RepulsiveCost, budget: int = DEFAULT_BUDGET) -> SolveResult:
    """Optimal plan of the finite LP over the N-fold transportation polytope.

    The truncated cost is used iff ``cost.truncation`` is set.  Tuples of
    infinite cost are removed from the LP; if the remaining system has no
    solution the value is ``inf``, backed by a phase-one certificate.  The
    returned dual is shifted until it is exactly feasible, so
    ``duality_gap`` is a rigorous optimality certificate.
    """
    if N < 2:
        raise PreconditionError(f"need N >= 2, got {N}")
    m = rho.size
    if m**N > budget:
        raise BudgetExceeded(
            f"{m}^{N} = {m**N} LP variables exceed the budget {budget}; use fewer atoms or the entropic solver"
        )
    truncated = cost.truncation is not None
    C = cost_tensor(cost, rho.positions, N, truncated).reshape(-1)
    idx_all = _index_tuples(m, N)
    cols = np.flatnonzero(np.isfinite(C))
    b = np.tile(rho.weights, N)
    info = {"variables": int(len(cols)), "eliminated": int(m**N - len(cols))}
    if len(cols) == 0:
        info["infeasibility"] = 1.0
        return SolveResult(None, math.inf, "exact-lp", certified=True, info=info)
    idx = idx_all[cols]
    c = C[cols]
    A = _marginal_matrix(idx, m, N)
    res = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs-ds", options=_HIGHS_OPTIONS)
    info["status"] = int(res.status)
    if res.status == 2:
        phase_one = _certify_infeasible(A, b)
        info["infeasibility"] = phase_one
        if phase_one <= 1e-9:
            raise SolverError("LP reported infeasible but phase one found a feasible point")
        return SolveResult(None, math.inf, "exact-lp", certified=True, info=info)
    if res.status != 0:
        raise SolverError(f"LP solve failed (status {res.status}): {res.message}")

    x = np.clip(res.x, 0.0, None)
    keep = x > 0
    plan = TransportPlan(rho, N, idx[keep], x[keep])
    value = float(c[keep] @ x[keep])

    y = np.asarray(res.eqlin.marginals, dtype=float).reshape(N, m)
    reduced = c - y[np.arange(N), idx].sum(axis=1)
    violation = max(0.0, -float(reduced.min()))
    y = y - violation / N
    dual_value = float(np.sum(y @ rho.weights))
    gap = value - dual_value
    residual = plan.marginal_residual()
    info["dual_violation_before_shift"] = violation
    certified = abs(gap) <= GAP_RTOL * (1 + abs(value)) and residual <= MARGINAL_TOL
    if not certified:
        warnings.warn(f"exact LP not certified: gap {gap:.3e}, residual {residual:.3e}", RuntimeWarning)
    return SolveResult(plan, value, "exact-lp", residual, gap, certified, y, info)


def solve_entropic(
    rho: DiscreteMeasure,
    N: int,
    cost: RepulsiveCost,
    epsilon: float,
    max_iters: int = 10_000,
    tol: float = 1e-8,
    init: Optional[np.ndarray] = None,
) -> SolveResult:
    """Multimarginal Sinkhorn on the Gibbs kernel ``exp(-c_alpha / epsilon)``.

    Runs in the log domain, updating the N scaling potentials cyclically.
    ``value`` is the transport cost of the returned plan; the regularized
    objective is in ``info``.  ``init`` warm-starts from earlier potentials
    (shape ``(N, m)``), e.g. along a decreasing epsilon schedule.
    """
    if cost.truncation is None:
        raise PreconditionError("the entropic solver needs a truncated (bounded) cost")
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    m = rho.size
    C = cost_tensor(cost, rho.positions, N, True)
    logw = np.log(rho.weights)
    f = np.zeros((N, m)) if init is None else np.array(init, dtype=float).reshape(N, m)
    shapes = []
    for i in range(N):
        s = [1] * N
        s[i] = m
        shapes.append(tuple(s))

    def log_plan(skip=None):
        total = -C
        for j in range(N):
            if j != skip:
                total = total + f[j].reshape(shapes[j])
        return total / epsilon

    residual = math.inf
    it = 0
    converged = False
    for it in range(1, max_iters + 1):
        for i in range(N):
            axes = tuple(a for a in range(N) if a != i)
            f[i] = epsilon * (logw - logsumexp(log_plan(skip=i), axis=axes))
        P = np.exp(log_plan())
        marg = np.stack([P.sum(axis=tuple(a for a in range(N) if a != i)) for i in range(N)])
        residual = float(np.abs(marg - rho.weights).max())
        if residual <= tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"entropic solver stopped after {it} sweeps with residual {residual:.3e}", RuntimeWarning)
    P = np.exp(log_plan())
    plan = TransportPlan.from_dense(rho, P)
    transport = float(np.sum(P * C))
    with np.errstate(divide="ignore", invalid="ignore"):
        neg_entropy = float(np.sum(np.where(P > 0, P * np.log(P), 0.0)))
    info = {
        "epsilon": float(epsilon),
        "iterations": it,
        "converged": converged,
        "regularized_objective": transport + epsilon * neg_entropy,
        "entropy": -neg_entropy,
        "potentials": f.copy(),
    }
    return SolveResult(plan, transport, "entropic", residual, None, False, None, info)


def brute_force_assignment(rho: DiscreteMeasure, N: int, cost: RepulsiveCost) -> SolveResult:
    """Two-marginal optimum by enumerating all permutation couplings.

    Uniform weights make the plans doubly stochastic, so an optimum sits at a
    permutation (Birkhoff).  Limited to at most 8 atoms.
    """
    m = rho.size
    if N != 2:
        raise PreconditionError("brute force handles N = 2 only")
    if m > 8:
        raise PreconditionError(f"brute force handles at most 8 atoms, got {m}")
    if np.abs(rho.weights - 1.0 / m).max() > 1e-12:
        raise PreconditionError("brute force needs uniform weights")
    phi = pair_matrix(cost, rho.positions, rho.positions, cost.truncation is not None)
    best, best_perm = math.inf, None
    rows = np.arange(m)
    for perm in itertools.permutations(range(m)):
        # sum in a fixed order; mean of the selected entries
        v = float(phi[rows, perm].sum()) / m
        if v < best:
            best, best_perm = v, perm
    if best_perm is None:
        return SolveResult(None, math.inf, "brute-force", certified=True, info={"permutations": math.factorial(m)})
    plan = TransportPlan(rho, 2, np.column_stack([rows, best_perm]), np.full(m, 1.0 / m))
    return SolveResult(plan, best, "brute-force", plan.marginal_residual(), 0.0, True, None,
                       {"permutations": math.factorial(m)})


def min_interparticle_gap(plan: TransportPlan, mass_threshold: float = 0.0) -> float:
    """Smallest pair distance inside any entry heavier than ``mass_threshold``.

    This is the largest ``alpha`` for which the thresholded support misses
    the strip where two particles are closer than ``alpha``.
    """
    idx = plan.indices[plan.weights > mass_threshold]
    if len(idx) == 0:
        return math.inf
    D = plan.marginal.distance_matrix
    gap = math.inf
    for i, j in itertools.combinations(range(plan.N), 2):
        gap = min(gap, float(D[idx[:, i], idx[:, j]].min()))
    return gap


def select_separated_points(plan: TransportPlan, x1, beta: float, *, all_coordinates: bool = True,
                            threshold: float = 0.0):
    """Greedily pick N support tuples that are pairwise beta-separated.

    With ``all_coordinates`` every coordinate of a tuple must be farther than
    ``beta`` from every coordinate of every other selected tuple.  Otherwise
    only coordinates with different indices are compared, which is the form
    a union bound over the marginals guarantees whenever the concentration at
    ``beta`` is below ``1/(N(N-1)^2)``.  Returns index tuples in selection
    order, starting with ``x1``.
    """
    rho, N = plan.marginal, plan.N
    tau = assumption_threshold(N)
    value, exact = concentration(rho, beta)
    if not exact:
        value = concentration_upper(rho, beta)
    if not value < tau:
        raise PreconditionError(f"concentration {value:.6g} at beta={beta:.6g} is not below {tau:.6g}")
    x1 = tuple(int(i) for i in x1)
    support = plan.indices[plan.weights > threshold]
    if not any(tuple(z) == x1 for z in support):
        raise PreconditionError(f"{x1} is not in the support of the plan")
    D = rho.distance_matrix
    chosen = [x1]
    for _ in range(1, N):
        ok = np.ones(len(support), dtype=bool)
        for z in chosen:
            z = np.asarray(z)
            # far[t, a, b]: coordinate a of candidate t vs coordinate b of z
            far = D[support[:, :, None], z[None, None, :]] > beta
            if not all_coordinates:
                far = far | np.eye(N, dtype=bool)[None]
            ok &= far.all(axis=(1, 2))
        hits = np.flatnonzero(ok)
        if len(hits) == 0:
            mode = "all coordinates" if all_coordinates else "cross coordinates"
            raise SeparationFailure(
                f"no support tuple is {beta:.6g}-separated ({mode}) from {chosen}; "
                f"concentration at beta is {value:.6g} < {tau:.6g}, support size {len(support)}"
            )
        chosen.append(tuple(int(i) for i in support[hits[0]]))
    return chosen

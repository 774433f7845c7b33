"""Per-instance checks of the support, cost and potential estimates."""

from __future__ import annotations

import math

import numpy as np

from ..costs import RepulsiveCost, alpha_star
from ..duality import (
    PotentialSet,
    canonicalize,
    check_complementary_slackness,
    dual_violation,
    extend_potential,
    normalize_at_support,
    solve_dual,
)
from ..errors import DomainError
from ..measures import DiscreteMeasure, find_beta, has_small_concentration
from ..solver import DEFAULT_BUDGET, SUPPORT_THRESHOLD, SolveResult, min_interparticle_gap, solve_entropic, solve_exact
from . import report as R
from .report import CheckEntry, VerificationReport, slack

N_PROBES = 1000
EQUALITY_TOL = 1e-8
FEASIBILITY_TOL = 1e-9
FIXED_POINT_TOL = 1e-10
POTENTIAL_TOL = 1e-6


class Instance:
    """One (measure, N, cost) triple with its solves computed on demand.

    ``cost`` is stored untruncated; truncation levels are passed per call.
    """

    def __init__(self, rho: DiscreteMeasure, N: int, cost: RepulsiveCost, seed=None, budget=DEFAULT_BUDGET):
        self.rho = rho
        self.N = N
        self.cost = cost.untruncated()
        self.seed = seed
        self.budget = budget
        self.assumption = has_small_concentration(rho, N)
        self.beta = find_beta(rho, N) if self.assumption else None
        self.alpha_star = alpha_star(self.cost, N, self.beta) if self.beta is not None else None
        self._solves = {}
        self._canonical = {}
        self._duals = {}

    @property
    def alpha_strict(self) -> float:
        """Largest level strictly inside the separation radius we test at."""
        return self.alpha_star * (1.0 - R.STRICT_DEFLATE)

    def cost_at(self, level=None) -> RepulsiveCost:
        return self.cost if level is None else self.cost.truncated(level)

    def solve(self, level=None) -> SolveResult:
        if level not in self._solves:
            self._solves[level] = solve_exact(self.rho, self.N, self.cost_at(level), budget=self.budget)
        return self._solves[level]

    def dual(self, level) -> PotentialSet:
        if level not in self._duals:
            self._duals[level] = solve_dual(self.rho, self.N, self.cost_at(level))
        return self._duals[level]

    def canonical(self, level) -> PotentialSet:
        if level not in self._canonical:
            self._canonical[level] = canonicalize(self.dual(level), self.cost_at(level))
        return self._canonical[level]

    def descriptor(self) -> dict:
        return {
            "hash": self.rho.digest(),
            "N": self.N,
            "d": self.rho.dimension,
            "m": self.rho.size,
            "cost": self.cost.descriptor(),
        }

    def new_report(self) -> VerificationReport:
        return VerificationReport(self.descriptor(), self.beta, self.alpha_star, seed=self.seed)


def _instance(rho, N, cost, inst):
    return inst if inst is not None else Instance(rho, N, cost)


def _skip_all(names, ref, inst):
    note = f"max atom weight {inst.rho.max_weight:.6g} violates the small-concentration assumption for N={inst.N}"
    return [CheckEntry.skipped(n, ref, note) for n in names]


def _uncertified(name, ref, res):
    return CheckEntry(name, ref, None, None, None, False, note=f"{res.method} solve not certified (gap {res.duality_gap})")


def verify_diagonal_avoidance(rho=None, N=None, cost=None, inst: Instance = None):
    """Minimal pair distance on optimal supports vs the separation radius.

    Checked for the exact cost and for its truncation at half the radius.
    """
    inst = _instance(rho, N, cost, inst)
    names = ["diagonal_avoidance", "diagonal_avoidance_truncated"]
    if not inst.assumption:
        return _skip_all(names, R.SEPARATION, inst)
    out = []
    for name, level in zip(names, [None, inst.alpha_star / 2]):
        res = inst.solve(level)
        if not res.certified or res.plan is None:
            out.append(_uncertified(name, R.SEPARATION, res))
            continue
        gap = min_interparticle_gap(res.plan, SUPPORT_THRESHOLD)
        out.append(CheckEntry.lower(name, R.SEPARATION, inst.alpha_strict, gap, 0.0,
                                    extra={"truncation": level}))
    return out


def verify_cost_bounds(rho=None, N=None, cost=None, inst: Instance = None):
    """Upper bound on the cost and equality with truncations below the radius."""
    inst = _instance(rho, N, cost, inst)
    names = ["cost_upper_bound", "truncation_equality_strict", "truncation_equality_half"]
    if not inst.assumption:
        return _skip_all(names, R.COST_BOUND, inst)
    N = inst.N
    exact = inst.solve()
    if not exact.certified:
        return [_uncertified(n, R.COST_BOUND, exact) for n in names]
    bound = N**3 * (N - 1) ** 2 / 4.0 * inst.cost.phi(inst.beta)
    out = [CheckEntry.upper(names[0], R.COST_BOUND, bound, exact.value, slack(bound))]
    for name, level in zip(names[1:], [inst.alpha_strict, inst.alpha_star / 2]):
        trunc = inst.solve(level)
        diff = abs(exact.value - trunc.value)
        out.append(CheckEntry.upper(name, R.TRUNCATION, EQUALITY_TOL, diff, 0.0,
                                    extra={"truncation": level, "truncated_value": trunc.value}))
    return out


def verify_duality(rho=None, N=None, cost=None, inst: Instance = None):
    """Zero duality gap for the truncated cost and transfer to the exact cost."""
    inst = _instance(rho, N, cost, inst)
    names = ["strong_duality", "transfer_feasibility", "transfer_objective", "canonical_fixed_point",
             "complementary_slackness"]
    if not inst.assumption:
        return _skip_all(names, R.DUALITY, inst)
    level = inst.alpha_star / 2
    primal = inst.solve(level)
    dual = inst.dual(level)
    gap = abs(primal.value - dual.objective)
    out = [CheckEntry.upper(names[0], R.DUALITY, EQUALITY_TOL * (1 + abs(primal.value)), gap, 0.0,
                            extra={"primal": primal.value, "dual": dual.objective})]
    canon = inst.canonical(level)
    exact = inst.solve()
    out.append(CheckEntry.upper(names[1], R.DUALITY, FEASIBILITY_TOL, dual_violation(canon, inst.cost), 0.0))
    out.append(CheckEntry.upper(names[2], R.DUALITY, EQUALITY_TOL, abs(canon.objective - exact.value), 0.0,
                                extra={"objective": canon.objective, "exact_value": exact.value}))
    out.append(CheckEntry.upper(names[3], R.DUALITY, FIXED_POINT_TOL, canon.info["fixed_point_residual"], 0.0,
                                extra={"iterations": canon.info["iterations"]}))
    cs = check_complementary_slackness(exact.plan, canon, inst.cost, SUPPORT_THRESHOLD)
    out.append(CheckEntry.upper(names[4], R.SLACKNESS, 1e-7, cs["max_residual"], 0.0,
                                extra={"weighted_residual": cs["weighted_residual"]}))
    return out


def probe_points(rho: DiscreteMeasure, margin: float, n: int, seed: int) -> np.ndarray:
    """``n`` uniform points in the atoms' bounding box inflated by ``margin``."""
    rng = np.random.default_rng(seed)
    lo = rho.positions.min(axis=0) - margin
    hi = rho.positions.max(axis=0) + margin
    return lo + (hi - lo) * rng.random((n, rho.dimension))


def verify_potential_bounds(rho=None, N=None, cost=None, inst: Instance = None, n_probes: int = N_PROBES,
                            probe_seed: int = None):
    """Sup, Lipschitz and semiconcavity estimates for the canonical potential.

    The potential is computed for the cost truncated just inside the
    separation radius and extended to R^d by inf-convolution over atom
    tuples; bounds are probed at random points around the atoms.
    """
    inst = _instance(rho, N, cost, inst)
    names = ["sup_bound", "sup_bound_tuple", "extension_matches_atoms", "lipschitz_bound", "semiconcavity_bound"]
    if not inst.assumption:
        return _skip_all(names, R.SUP_BOUND, inst)
    N, rho = inst.N, inst.rho
    seed = probe_seed if probe_seed is not None else (inst.seed if inst.seed is not None else 0)
    level = inst.alpha_strict
    cost_t = inst.cost_at(level)
    pot = inst.canonical(level)
    plan = inst.solve(level).plan
    normed = normalize_at_support(pot, plan, cost_t)
    X = probe_points(rho, 2 * inst.beta, n_probes, seed)
    U = extend_potential(pot, cost_t, X)
    at_atoms = extend_potential(pot, cost_t, rho.positions)

    bound = N * (N - 1) ** 2 * inst.cost.phi(level / 2)
    sup_u = float(max(np.abs(pot.u).max(), np.abs(U).max()))
    shifts = np.asarray(normed.info["shifts"])
    sup_tuple = float(max(np.abs(normed.tuple).max(), np.abs(U[None, :] + shifts[:, None]).max()))
    extra = {"probe_seed": seed, "n_probes": n_probes, "normalized_at": normed.info["normalized_at"]}
    out = [
        CheckEntry.upper(names[0], R.SUP_BOUND, bound, sup_u, POTENTIAL_TOL, extra=extra),
        CheckEntry.upper(names[1], R.SUP_BOUND, bound, sup_tuple, POTENTIAL_TOL, extra={"shifts": shifts.tolist()}),
        CheckEntry.upper(names[2], R.SUP_BOUND, FEASIBILITY_TOL, float(np.abs(at_atoms - pot.u).max()), 0.0),
    ]

    try:
        k_bound = inst.cost.lipschitz_bound(inst.alpha_star)
        sc_bound = inst.cost.semiconcavity_bound(inst.alpha_star)
    except DomainError as exc:
        out += [CheckEntry.skipped(n, R.LIPSCHITZ, str(exc)) for n in names[3:]]
        return out

    rng = np.random.default_rng(seed + 1)
    diag = float(np.linalg.norm(X.max(axis=0) - X.min(axis=0)))
    direction = rng.normal(size=X.shape)
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    h = direction * (diag * 10.0 ** rng.uniform(-3, -1, size=(len(X), 1)))
    U_plus = extend_potential(pot, cost_t, X + h)
    U_minus = extend_potential(pot, cost_t, X - h)
    partner = rng.permutation(len(X))
    dist_far = np.linalg.norm(X - X[partner], axis=1)
    ok = dist_far > 0
    slopes = np.concatenate([
        np.abs(U - U[partner])[ok] / dist_far[ok],
        np.abs(U_plus - U) / np.linalg.norm(h, axis=1),
    ])
    slope_excess = np.concatenate([
        np.abs(U - U[partner])[ok] - k_bound * dist_far[ok],
        np.abs(U_plus - U) - k_bound * np.linalg.norm(h, axis=1),
    ])
    max_slope = float(slopes.max())
    lip = CheckEntry.upper(names[3], R.LIPSCHITZ, k_bound, max_slope, 0.0, extra={"pairs": int(len(slopes))})
    lip.passed = bool(slope_excess.max() <= POTENTIAL_TOL)

    hh = np.einsum("ij,ij->i", h, h)
    second = U_plus + U_minus - 2 * U
    quotient = float((second / hh).max())
    sc = CheckEntry.upper(names[4], R.SEMICONCAVITY, 2 * sc_bound, quotient, 0.0, extra={"pairs": int(len(hh))})
    sc.passed = bool((second - 2 * sc_bound * hh).max() <= POTENTIAL_TOL)
    out += [lip, sc]
    return out


def entropic_sanity(rho=None, N=None, cost=None, inst: Instance = None, epsilons=(1.0, 0.1, 0.01),
                    level=None, max_iters: int = 200_000):
    """Entropic values along a decreasing epsilon ladder vs the exact truncated value.

    Diagnostic only: entries never affect a report's pass/fail status.
    """
    inst = _instance(rho, N, cost, inst)
    if level is None:
        if not inst.assumption:
            return [CheckEntry.skipped("entropic_ladder", R.ENTROPIC, "no truncation level available", diagnostic=True)]
        level = inst.alpha_star / 2
    N, rho = inst.N, inst.rho
    cost_t = inst.cost_at(level)
    exact = inst.solve(level).value
    values, residuals, iters = [], [], []
    init = None
    for eps in epsilons:
        res = solve_entropic(rho, N, cost_t, eps, max_iters=max_iters, init=init)
        init = res.info["potentials"]
        values.append(res.value)
        residuals.append(res.primal_residual)
        iters.append(res.info["iterations"])
    out = []
    for eps, v, res, it in zip(epsilons, values, residuals, iters):
        out.append(CheckEntry.upper(f"entropic_gap[eps={eps:g}]", R.ENTROPIC, eps * N * math.log(rho.size),
                                    v - exact, 1e-6, diagnostic=True,
                                    extra={"value": v, "exact": exact, "residual": res, "iterations": it}))
    steps = [values[i + 1] - values[i] for i in range(len(values) - 1)]
    mono = CheckEntry.upper("entropic_monotone", R.ENTROPIC, 0.0, max(steps) if steps else 0.0,
                            1e-9 * (1 + abs(exact)), diagnostic=True)
    out.append(mono)
    # the plan is only feasible up to its residual; allow for that in the lower bound
    low_tol = 1e-6 * (1 + abs(exact))
    out.append(CheckEntry.lower("entropic_above_exact", R.ENTROPIC, exact, min(values), low_tol, diagnostic=True))
    out.append(CheckEntry.upper("entropic_residual", R.ENTROPIC, 1e-8, max(residuals), 0.0, diagnostic=True))
    return out


def verify_instance(rho: DiscreteMeasure, N: int, cost: RepulsiveCost, seed=None, n_probes: int = N_PROBES,
                    budget: int = DEFAULT_BUDGET, entropic: bool = False) -> VerificationReport:
    """All per-instance checks bundled in one report."""
    inst = Instance(rho, N, cost, seed=seed, budget=budget)
    rep = inst.new_report()
    if not inst.assumption:
        rep.add(_skip_all(["all_checks"], R.SEPARATION, inst))
        return rep
    rep.add(verify_diagonal_avoidance(inst=inst))
    rep.add(verify_cost_bounds(inst=inst))
    rep.add(verify_duality(inst=inst))
    rep.add(verify_potential_bounds(inst=inst, n_probes=n_probes))
    if entropic:
        rep.add(entropic_sanity(inst=inst))
    return rep

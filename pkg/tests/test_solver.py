import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmot.costs import PowerLawCost, cost_tensor
from mmot.errors import BudgetExceeded, PreconditionError, SeparationFailure
from mmot.measures import DiscreteMeasure, find_beta
from mmot.solver import (
    TransportPlan,
    brute_force_assignment,
    min_interparticle_gap,
    select_separated_points,
    solve_entropic,
    solve_exact,
)


def permutation_value(pos, s=1.0):
    """Independent oracle: best derangement of equal atoms on a line."""
    best = math.inf
    m = len(pos)
    for p in itertools.permutations(range(m)):
        if any(p[i] == i for i in range(m)):
            continue
        best = min(best, sum(abs(pos[i] - pos[p[i]]) ** -s for i in range(m)) / m)
    return best


class TestExact:
    def test_two_dirac(self, two_dirac, coulomb):
        res = solve_exact(two_dirac, 2, coulomb)
        assert res.value == pytest.approx(1.0, abs=1e-10)
        assert res.certified
        assert res.plan.entries == {(0, 1): pytest.approx(0.5), (1, 0): pytest.approx(0.5)}

    @pytest.mark.parametrize("t", [0.01, 0.1, 0.3])
    def test_unbalanced_two_dirac_is_infinite(self, two_dirac, coulomb, t):
        rho = DiscreteMeasure(two_dirac.positions, np.array([0.5 + t, 0.5 - t]))
        res = solve_exact(rho, 2, coulomb)
        assert res.value == math.inf
        assert res.certified
        # only (0,1) and (1,0) are finite; each misses its row and column mass by t at best
        assert res.info["infeasibility"] == pytest.approx(4 * t, abs=1e-9)

    def test_four_points_birkhoff(self, coulomb):
        # frozen from permutation_value([0, 1, 2, 3]) = 0.5
        rho = DiscreteMeasure.uniform(np.arange(4.0)[:, None])
        assert solve_exact(rho, 2, coulomb).value == pytest.approx(0.5, abs=1e-10)

    def test_plan_marginals(self, uniform8, coulomb):
        res = solve_exact(uniform8, 3, coulomb)
        assert res.plan.marginal_residual() <= 1e-9
        assert abs(res.duality_gap) <= 1e-8 * (1 + res.value)

    def test_budget(self, uniform8, coulomb):
        with pytest.raises(BudgetExceeded, match="entropic"):
            solve_exact(uniform8, 3, coulomb, budget=100)

    def test_truncation_never_raises_value(self, uniform8, coulomb):
        exact = solve_exact(uniform8, 2, coulomb).value
        for alpha in (0.1, 1.0, 5.0):
            assert solve_exact(uniform8, 2, coulomb.truncated(alpha)).value <= exact + 1e-12

    @given(st.integers(0, 2**32 - 1))
    def test_permutation_oracle(self, seed):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(2, 7))
        pos = np.sort(rng.choice(np.arange(40), m, replace=False)) / 10.0
        rho = DiscreteMeasure.uniform(pos[:, None])
        assert solve_exact(rho, 2, PowerLawCost(1.0)).value == pytest.approx(permutation_value(pos), abs=1e-8)

    @given(st.integers(0, 2**32 - 1), st.permutations(range(5)))
    def test_relabelling_invariance(self, seed, order):
        rng = np.random.default_rng(seed)
        rho = DiscreteMeasure(rng.random((5, 2)), rng.dirichlet(np.ones(5) * 5))
        c = PowerLawCost(1.0)
        assert solve_exact(rho.permuted(list(order)), 2, c).value == pytest.approx(solve_exact(rho, 2, c).value,
                                                                               rel=1e-9)


class TestBruteForce:
    def test_two_atoms(self, two_dirac, coulomb):
        assert brute_force_assignment(two_dirac, 2, coulomb).value == pytest.approx(1.0)

    def test_three_atoms(self, coulomb):
        # frozen from permutation_value([0, 1, 3]) = 11/18
        rho = DiscreteMeasure.uniform(np.array([[0.0], [1.0], [3.0]]))
        assert brute_force_assignment(rho, 2, coulomb).value == pytest.approx(11 / 18)

    def test_limits(self, uniform8, coulomb):
        with pytest.raises(PreconditionError):
            brute_force_assignment(uniform8, 3, coulomb)
        rho = DiscreteMeasure.uniform(np.arange(9.0)[:, None])
        with pytest.raises(PreconditionError):
            brute_force_assignment(rho, 2, coulomb)


class TestEntropic:
    def test_needs_truncation(self, uniform8, coulomb):
        with pytest.raises(PreconditionError):
            solve_entropic(uniform8, 2, coulomb, 0.1)

    def test_large_epsilon_gives_product(self, two_dirac, coulomb):
        res = solve_entropic(two_dirac, 2, coulomb.truncated(0.5), 1e6)
        dense = np.zeros((2, 2))
        for z, w in res.plan.entries.items():
            dense[z] = w
        assert np.allclose(dense, 0.25, atol=1e-5)

    def test_residual_and_gap(self, uniform8, coulomb):
        c = coulomb.truncated(0.5)
        exact = solve_exact(uniform8, 2, c).value
        res = solve_entropic(uniform8, 2, c, 0.05)
        assert res.info["converged"]
        assert res.primal_residual <= 1e-8
        assert exact - 1e-6 <= res.value <= exact + 0.05 * 2 * math.log(8) + 1e-6

    def test_warm_start(self, uniform8, coulomb):
        c = coulomb.truncated(0.5)
        cold = solve_entropic(uniform8, 2, c, 0.01)
        warm = solve_entropic(uniform8, 2, c, 0.01, init=solve_entropic(uniform8, 2, c, 0.1).info["potentials"])
        assert warm.value == pytest.approx(cold.value, abs=1e-6)
        assert warm.info["iterations"] <= cold.info["iterations"]


class TestGap:
    def test_two_dirac_plan(self, two_dirac):
        plan = TransportPlan.from_entries(two_dirac, {(0, 1): 0.5, (1, 0): 0.5})
        assert min_interparticle_gap(plan) == 1.0

    def test_threshold_ignores_dust(self, two_dirac):
        plan = TransportPlan.from_entries(two_dirac, {(0, 1): 0.5 - 1e-12, (1, 0): 0.5 - 1e-12,
                                                      (0, 0): 1e-12, (1, 1): 1e-12})
        assert min_interparticle_gap(plan, 1e-9) == 1.0
        assert min_interparticle_gap(plan, 0.0) == 0.0


class TestSeparatedPoints:
    def test_two_marginals(self, uniform8, coulomb):
        plan = solve_exact(uniform8, 2, coulomb).plan
        beta = find_beta(uniform8, 2)
        x1 = tuple(plan.indices[0])
        chosen = select_separated_points(plan, x1, beta)
        D = uniform8.distance_matrix
        assert chosen[0] == x1
        assert all(D[a, b] > beta for a in chosen[0] for b in chosen[1])

    def test_precondition(self, two_dirac, coulomb):
        plan = solve_exact(two_dirac, 2, coulomb).plan
        with pytest.raises(PreconditionError):
            select_separated_points(plan, (0, 1), 0.4)

    def test_all_coordinates_can_fail(self):
        # cyclic plan on three spread atoms: every other support tuple shares an atom with (0, 1)
        rho = DiscreteMeasure.uniform(np.array([[0.0], [10.0], [20.0]]))
        plan = TransportPlan.from_entries(rho, {(0, 1): 1 / 3, (1, 2): 1 / 3, (2, 0): 1 / 3})
        with pytest.raises(SeparationFailure):
            select_separated_points(plan, (0, 1), 1.0)
        chosen = select_separated_points(plan, (0, 1), 1.0, all_coordinates=False)
        assert len(chosen) == 2

    @given(st.integers(0, 2**32 - 1))
    def test_cross_coordinate_separation_on_optimal_plans(self, seed):
        from mmot.analysis.campaign import random_instance

        rng = np.random.default_rng(seed)
        N = int(rng.integers(2, 4))
        rho = random_instance(seed, N=N)
        plan = solve_exact(rho, N, PowerLawCost(1.0)).plan
        beta = find_beta(rho, N)
        heavy = plan.indices[plan.weights > 1e-9]
        x1 = tuple(heavy[int(rng.integers(len(heavy)))])
        chosen = select_separated_points(plan, x1, beta, all_coordinates=False, threshold=1e-9)
        D = rho.distance_matrix
        for a, b in itertools.combinations(chosen, 2):
            for i in range(N):
                for j in range(N):
                    if i != j:
                        assert D[a[i], b[j]] > beta

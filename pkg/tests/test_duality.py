import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmot.analysis.campaign import random_instance
from mmot.costs import PowerLawCost, alpha_star
from mmot.duality import (
    PotentialSet,
    c_transform,
    canonicalize,
    check_complementary_slackness,
    dual_violation,
    extend_potential,
    make_feasible,
    normalize_at_support,
    solve_dual,
    tuple_from_symmetric,
)
from mmot.errors import PreconditionError
from mmot.measures import DiscreteMeasure, find_beta
from mmot.solver import TransportPlan, solve_exact


def truncated_instance(seed, N):
    rho = random_instance(seed, N=N)
    c = PowerLawCost(1.0)
    return rho, c, c.truncated(alpha_star(c, N, find_beta(rho, N)) / 2)


def test_two_dirac_zero_gap(two_dirac, coulomb):
    c = coulomb.truncated(0.5)
    with pytest.warns(RuntimeWarning):
        pot = solve_dual(two_dirac, 2, c)
    assert pot.objective == pytest.approx(1.0, abs=1e-10)
    assert solve_exact(two_dirac, 2, c).value == pytest.approx(1.0, abs=1e-10)


def test_needs_truncation(uniform8, coulomb):
    with pytest.raises(PreconditionError):
        solve_dual(uniform8, 2, coulomb)


@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3]))
def test_strong_duality(seed, N):
    rho, _, ct = truncated_instance(seed, N)
    primal = solve_exact(rho, N, ct).value
    pot = solve_dual(rho, N, ct)
    assert dual_violation(pot, ct) <= 1e-9
    assert abs(pot.objective - primal) <= 1e-8 * (1 + abs(primal))


@given(st.integers(0, 2**32 - 1))
def test_weak_duality_for_feasible_potentials(seed):
    rho, _, ct = truncated_instance(seed, 2)
    rng = np.random.default_rng(seed)
    primal = solve_exact(rho, 2, ct).value
    pot = make_feasible(PotentialSet(rho, 2, rng.normal(size=rho.size) * 3), ct)
    assert dual_violation(pot, ct) <= 1e-12
    assert pot.objective <= primal + 1e-9


class TestCanonical:
    @given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3]))
    def test_fixed_point_and_monotone(self, seed, N):
        rho, _, ct = truncated_instance(seed, N)
        pot = solve_dual(rho, N, ct)
        canon = canonicalize(pot, ct)
        assert canon.info["fixed_point_residual"] <= 1e-10
        assert canon.objective >= pot.objective - 1e-12
        assert np.all(canon.u >= pot.u - 1e-12)
        assert dual_violation(canon, ct) <= 1e-9

    @given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3]))
    def test_recovers_from_uniform_shift(self, seed, N):
        rho, _, ct = truncated_instance(seed, N)
        pot = solve_dual(rho, N, ct)
        canon = canonicalize(PotentialSet(rho, N, pot.u - 5), ct)
        assert canon.objective >= pot.objective - 1e-8

    @given(st.integers(0, 2**32 - 1))
    def test_random_perturbation_only_improves(self, seed):
        # fixed points are not unique: from a generic feasible start the
        # iteration may stop below the optimum, but never below the start
        rho, _, ct = truncated_instance(seed, 2)
        pot = solve_dual(rho, 2, ct)
        rng = np.random.default_rng(seed)
        broken = PotentialSet(rho, 2, pot.u - 5 - rng.random(rho.size))
        canon = canonicalize(broken, ct)
        assert broken.objective - 1e-12 <= canon.objective <= pot.objective + 1e-8
        assert canon.info["fixed_point_residual"] <= 1e-10

    def test_rejects_infeasible(self, uniform8, coulomb):
        ct = coulomb.truncated(0.5)
        with pytest.raises(PreconditionError):
            canonicalize(PotentialSet(uniform8, 2, np.full(8, 100.0)), ct)


class TestExtension:
    def test_matches_atoms(self):
        rho, _, ct = truncated_instance(5, 3)
        canon = canonicalize(solve_dual(rho, 3, ct), ct)
        assert np.allclose(extend_potential(canon, ct, rho.positions), canon.u, atol=1e-12)

    def test_far_point_is_bounded(self):
        rho, _, ct = truncated_instance(8, 2)
        canon = canonicalize(solve_dual(rho, 2, ct), ct)
        x = np.full(rho.dimension, 1e3)
        # far away the pair term vanishes up to 1e-3, leaving -max u
        expected = float(np.min(ct.phi_truncated(np.linalg.norm(rho.positions - x, axis=1)) - canon.u))
        assert extend_potential(canon, ct, x) == pytest.approx(expected, abs=1e-12)
        assert abs(extend_potential(canon, ct, x) + canon.u.max()) <= 2e-3

    def test_c_transform_tuples(self):
        rho, _, ct = truncated_instance(3, 3)
        canon = canonicalize(solve_dual(rho, 3, ct), ct)
        values, tuples = c_transform(canon, ct, return_tuples=True)
        assert tuples.shape == (rho.size, 2)
        assert np.allclose(values, canon.u, atol=1e-9)


class TestSlackness:
    def test_optimal_pair(self):
        rho, c, ct = truncated_instance(21, 2)
        plan = solve_exact(rho, 2, c).plan
        canon = canonicalize(solve_dual(rho, 2, ct), ct)
        assert check_complementary_slackness(plan, canon, c)["max_residual"] <= 1e-7

    def test_suboptimal_plan(self):
        rho, c, ct = truncated_instance(22, 2)
        canon = canonicalize(solve_dual(rho, 2, ct), ct)
        # the independent coupling is feasible and suboptimal
        w = rho.weights
        plan = TransportPlan.from_dense(rho, np.outer(w, w))
        res = check_complementary_slackness(plan, canon, ct)
        assert res["primal_minus_dual"] > 1e-3
        assert res["weighted_residual"] == pytest.approx(res["primal_minus_dual"], abs=1e-9)

    def test_perturbed_potential_detected(self):
        rho, c, ct = truncated_instance(23, 2)
        plan = solve_exact(rho, 2, c).plan
        canon = canonicalize(solve_dual(rho, 2, ct), ct)
        u = canon.u.copy()
        u[0] -= 0.1
        res = check_complementary_slackness(plan, PotentialSet(rho, 2, u), c)
        assert res["max_residual"] >= 0.1 - 1e-9
        assert not res["pass"]


class TestShifts:
    def test_zero_shifts(self):
        rho, _, ct = truncated_instance(1, 3)
        pot = solve_dual(rho, 3, ct)
        tup = tuple_from_symmetric(pot, [0.0, 0.0, 0.0], ct)
        assert np.array_equal(tup.tuple, np.tile(pot.u, (3, 1)))

    @given(st.lists(st.floats(-3, 3), min_size=2, max_size=2))
    def test_objective_invariance(self, s):
        rho, _, ct = truncated_instance(2, 3)
        pot = solve_dual(rho, 3, ct)
        shifts = np.array(s + [-(s[0] + s[1])])
        tup = tuple_from_symmetric(pot, shifts, ct)
        total = sum(tup.tuple[i] @ rho.weights for i in range(3))
        assert total == pytest.approx(pot.objective, abs=1e-9)

    def test_normalization(self):
        rho, c, ct = truncated_instance(4, 3)
        canon = canonicalize(solve_dual(rho, 3, ct), ct)
        plan = solve_exact(rho, 3, ct).plan
        normed = normalize_at_support(canon, plan, ct)
        z = normed.info["normalized_at"]
        from mmot.costs import pairwise_cost

        cz = pairwise_cost(ct, rho.positions[z], truncated=True)
        for i in range(3):
            assert normed.tuple[i, z[i]] == pytest.approx(cz / 3, abs=1e-8)

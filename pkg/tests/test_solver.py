import numpy as np
import pytest

from beamsched.errors import DegenerateChain, NoConvergence, SingularSystem
from beamsched.model import UserParams, holding_cost_table, transition_row
from beamsched.solver import (
    BOUNDARY_MARGIN,
    Kernel,
    SolverKnobs,
    discounted_value_iteration,
    extract_threshold,
    relative_value_iteration,
    service_gain,
    solve_fixed_threshold,
    stationary_distribution,
    threshold_average_cost,
    threshold_system,
)

KNOBS = SolverKnobs()


def make_params(a, d, P, q, n):
    return UserParams(arrival_prob=a, channel_prob=d, beam_cost=P, holding_coeff=q, buffer_size=n)


def dense_matrix(p, actions):
    return np.vstack(
        [
            [transition_row(x, int(actions[x]), p).prob(y) for y in range(p.buffer_size + 1)]
            for x in range(p.buffer_size + 1)
        ]
    )


def stationary_by_eig(matrix):
    w, vl = np.linalg.eig(matrix.T)
    i = int(np.argmin(np.abs(w - 1.0)))
    v = np.real(vl[:, i])
    return v / v.sum()


class TestKernel:
    def test_rows_match_enumerated_transitions(self):
        p = make_params(0.55, 0.35, 60.0, 30.0, 40)
        kern = Kernel(p)
        for x in range(41):
            for u in (0, 1):
                dense = kern.row(x, u)
                for state, prob in transition_row(x, u, p).entries:
                    assert dense[state] == pytest.approx(prob, abs=1e-15)
                assert dense.sum() == pytest.approx(1.0, abs=1e-12)

    def test_expectations_match_matrix_product(self):
        p = make_params(0.3, 0.7, 5.0, 1.0, 25)
        kern = Kernel(p)
        rng = np.random.default_rng(2)
        v = rng.normal(size=26)
        active = dense_matrix(p, np.ones(26, dtype=int)) @ v
        passive = dense_matrix(p, np.zeros(26, dtype=int)) @ v
        np.testing.assert_allclose(kern.expect_active(v), active, atol=1e-12)
        np.testing.assert_allclose(kern.expect_passive(v), passive, atol=1e-12)


class TestRelativeValueIteration:
    def assert_actions_match_brute_argmin(self, sol, p):
        # enumerate both optimality-equation branches from the returned table
        kern = Kernel(p)
        q_active = kern.expect_active(sol.values) + p.beam_cost
        q_passive = kern.expect_passive(sol.values) + sol.tax
        expected = (q_active < q_passive).astype(int)
        np.testing.assert_array_equal(sol.actions, expected)

    def test_huge_tax_forces_service(self):
        p = make_params(0.4, 0.5, 12.0, 3.0, 30)
        lam = 10.0 * (p.beam_cost + p.holding_coeff * p.buffer_size**2)
        sol = relative_value_iteration(lam, p, KNOBS)
        assert np.all(sol.actions[1:] == 1)
        self.assert_actions_match_brute_argmin(sol, p)

    def test_nonpositive_tax_and_dominant_beam_cost_forces_idle(self):
        # beam cost an order beyond the worst holding cost: serving can
        # never recoup it, so with the tax non-positive idling wins everywhere
        n = 20
        p = make_params(0.4, 0.5, 10.0 * 2.0 * n * n, 2.0, n)
        sol = relative_value_iteration(-1.0, p, KNOBS)
        assert np.all(sol.actions == 0)
        assert sol.threshold == n
        self.assert_actions_match_brute_argmin(sol, p)

    def test_avg_cost_matches_policy_evaluation_oracle(self):
        # independent route: stationary law of the returned action map's chain
        p = make_params(0.55, 0.35, 60.0, 30.0, 60)
        sol = relative_value_iteration(100.0, p, KNOBS)
        v = stationary_by_eig(dense_matrix(p, sol.actions))
        hold = np.asarray(holding_cost_table(p))
        cost = hold + np.where(sol.actions == 1, p.beam_cost, 100.0)
        assert sol.avg_cost == pytest.approx(float(v @ cost), abs=1e-6)

    def test_values_anchored_and_residual_bounded(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            p = make_params(
                float(rng.uniform(0.1, 0.9)),
                float(rng.uniform(0.1, 0.9)),
                float(rng.uniform(1, 100)),
                float(rng.uniform(0, 20)),
                40,
            )
            lam = float(rng.uniform(-p.beam_cost, 2 * p.beam_cost))
            sol = relative_value_iteration(lam, p, KNOBS)
            assert sol.values[0] == 0.0
            scale = max(1.0, float(np.max(np.abs(sol.values))))
            assert sol.residual <= max(KNOBS.rvi_tol, 64 * np.finfo(float).eps * scale)

    def test_monotone_values_inside_margin(self):
        p = make_params(0.3, 0.6, 20.0, 2.0, 60)
        for lam in (-10.0, 0.0, 10.0, 19.0, 200.0):
            sol = relative_value_iteration(lam, p, KNOBS)
            hi = p.buffer_size - BOUNDARY_MARGIN
            assert np.all(np.diff(sol.values[: hi + 1]) >= -1e-9)

    def test_convex_values_for_stable_user(self):
        p = make_params(0.2, 0.8, 20.0, 2.0, 60)
        sol = relative_value_iteration(5.0, p, KNOBS)
        hi = p.buffer_size - BOUNDARY_MARGIN
        v = sol.values
        second = v[2 : hi + 1] - 2 * v[1:hi] + v[: hi - 1]
        assert np.all(second >= -1e-9)

    def test_no_convergence_raises(self):
        p = make_params(0.4, 0.5, 10.0, 2.0, 30)
        with pytest.raises(NoConvergence):
            relative_value_iteration(5.0, p, SolverKnobs(rvi_tol=1e-12, rvi_max_iter=3))


class TestDiscountedValueIteration:
    def test_constant_cost_gives_geometric_sum(self):
        # zero holding cost and P == tax: every policy costs c per slot
        c = 7.0
        p = make_params(0.4, 0.5, c, 0.0, 20)
        for gamma in (0.9, 0.99):
            values, v0 = discounted_value_iteration(c, gamma, p, KNOBS)
            np.testing.assert_allclose(values, c / (1.0 - gamma), rtol=1e-9)
            assert v0 == pytest.approx(c / (1.0 - gamma), rel=1e-9)

    def test_vanishing_discount_approaches_average_cost(self):
        p = make_params(0.3, 0.6, 10.0, 1.0, 60)
        lam = 5.0
        eta = relative_value_iteration(lam, p, KNOBS).avg_cost
        _, v0_hi = discounted_value_iteration(lam, 0.999, p, KNOBS)
        _, v0_lo = discounted_value_iteration(lam, 0.99, p, KNOBS)
        gap_hi = abs((1 - 0.999) * v0_hi - eta)
        gap_lo = abs((1 - 0.99) * v0_lo - eta)
        assert gap_hi <= 0.1
        assert gap_hi < gap_lo

    def test_rejects_bad_gamma(self):
        p = make_params(0.3, 0.6, 10.0, 1.0, 20)
        with pytest.raises(ValueError):
            discounted_value_iteration(1.0, 1.0, p, KNOBS)


class TestFixedThresholdSolve:
    def test_all_passive_absorbs_at_cap(self):
        p = make_params(0.5, 0.5, 10.0, 1.0, 30)
        _, eta = solve_fixed_threshold(7.0, 30, p, KNOBS)
        assert eta == pytest.approx(1.0 * 30 * 30 + 7.0, abs=1e-9)

    def test_matches_policy_restricted_value_iteration(self):
        p = make_params(0.5, 0.5, 10.0, 1.0, 30)
        lam, t = 5.0, 2
        values, eta = solve_fixed_threshold(lam, t, p, KNOBS)
        # independent oracle: relative value iteration locked to the policy
        kern = Kernel(p)
        actions = (np.arange(31) > t).astype(int)
        costs = np.asarray(holding_cost_table(p)) + np.where(actions == 1, p.beam_cost, lam)
        v = np.zeros(31)
        for _ in range(200_000):
            ev = np.where(actions == 1, kern.expect_active(v), kern.expect_passive(v))
            w = costs + ev
            g = w - v
            if np.max(np.abs(g - g[0])) < 1e-13:
                break
            v = w - w[0]
        assert eta == pytest.approx(float(g[0]), abs=1e-6)
        np.testing.assert_allclose(values, v, atol=1e-6)

    def test_always_active_matches_stationary_cost(self):
        p = make_params(0.45, 0.55, 12.0, 2.0, 40)
        _, eta = solve_fixed_threshold(3.0, -1, p, KNOBS)
        dist = stationary_distribution(-1, p)
        hold = np.asarray(holding_cost_table(p))
        assert eta == pytest.approx(float((hold + p.beam_cost) @ dist.probs), abs=1e-8)

    def test_equation_residuals_tiny(self):
        p = make_params(0.6, 0.4, 25.0, 5.0, 50)
        for t in (-1, 0, 7, 49, 50):
            mat, rhs_base, rhs_tax = threshold_system(p, t)
            values, eta = solve_fixed_threshold(-3.0, t, p, KNOBS)
            sol = np.concatenate([values, [eta]])
            residual = mat @ sol - (rhs_base + (-3.0) * rhs_tax)
            assert np.max(np.abs(residual)) <= 1e-9

    def test_pivot_guard_raises(self):
        p = make_params(0.5, 0.5, 10.0, 1.0, 10)
        with pytest.raises(SingularSystem):
            solve_fixed_threshold(0.0, 3, p, SolverKnobs(linear_solve_pivot_tol=1e9))


class TestStationaryDistribution:
    def test_all_passive_is_point_mass_at_cap(self):
        p = make_params(0.4, 0.6, 10.0, 1.0, 25)
        dist = stationary_distribution(25, p)
        assert dist.degenerate
        assert dist.probs[25] == 1.0
        assert dist.probs[:25].sum() == 0.0

    def test_matches_power_iteration_oracle(self):
        p = make_params(0.4, 0.6, 10.0, 1.0, 50)
        dist = stationary_distribution(0, p)
        matrix = dense_matrix(p, (np.arange(51) > 0).astype(int))
        v = np.full(51, 1.0 / 51)
        for _ in range(200_000):
            nxt = v @ matrix
            if np.max(np.abs(nxt - v)) < 1e-16:
                break
            v = nxt
        np.testing.assert_allclose(dist.probs, v, atol=1e-10)

    def test_invariants_and_transience_below_threshold(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            p = make_params(
                float(rng.uniform(0.1, 0.9)), float(rng.uniform(0.1, 0.9)), 5.0, 1.0, 30
            )
            t = int(rng.integers(-1, 30))
            dist = stationary_distribution(t, p)
            assert np.all(dist.probs >= 0.0)
            assert dist.probs.sum() == pytest.approx(1.0, abs=1e-10)
            if t >= 1:
                assert np.all(dist.probs[:t] == 0.0)
            matrix = dense_matrix(p, (np.arange(31) > t).astype(int))
            assert np.max(np.abs(dist.probs @ matrix - dist.probs)) <= 1e-8

    def test_passive_mass_strictly_increasing_in_threshold(self):
        p = make_params(0.4, 0.6, 10.0, 1.0, 40)
        masses = [
            stationary_distribution(t, p).probs[: t + 1].sum() for t in range(0, 40)
        ]
        assert np.all(np.diff(masses) > 0.0)


class TestThresholdAverageCost:
    def test_always_active_zero_holding_equals_beam_cost(self):
        p = make_params(0.3, 0.7, 13.0, 0.0, 30)
        assert threshold_average_cost(5.0, -1, p) == pytest.approx(13.0, abs=1e-12)

    def test_degenerate_threshold_raises(self):
        p = make_params(0.3, 0.7, 13.0, 1.0, 30)
        with pytest.raises(DegenerateChain):
            threshold_average_cost(5.0, 30, p)

    def test_supermodularity_on_sampled_quadruples(self):
        rng = np.random.default_rng(12)
        p = make_params(0.5, 0.45, 30.0, 4.0, 40)
        taxes = np.linspace(-p.beam_cost, 2 * p.beam_cost + 4.0 * 1600, 12)
        for _ in range(60):
            l2, l1 = np.sort(rng.choice(taxes, 2, replace=False))
            t2, t1 = np.sort(rng.choice(np.arange(-1, 40), 2, replace=False))
            lhs = threshold_average_cost(l1, int(t2), p) + threshold_average_cost(l2, int(t1), p)
            rhs = threshold_average_cost(l1, int(t1), p) + threshold_average_cost(l2, int(t2), p)
            assert lhs <= rhs + 1e-8 * max(1.0, abs(rhs))

    def test_best_threshold_cost_equals_solver_average(self):
        # threshold optimality: the best threshold policy attains the MDP optimum
        for a, d, q in ((0.4, 0.6, 1.0), (0.55, 0.35, 30.0)):
            p = make_params(a, d, 10.0, q, 50)
            for lam in (-5.0, 0.0, 5.0, 9.9, 50.0):
                eta = relative_value_iteration(lam, p, KNOBS).avg_cost
                best = min(
                    threshold_average_cost(lam, t, p) for t in range(-1, p.buffer_size)
                )
                assert best == pytest.approx(eta, abs=1e-6)


class TestExtractThreshold:
    def test_examples(self):
        assert extract_threshold(np.array([0, 0, 0, 1, 1])) == 2
        assert extract_threshold(np.array([1, 1, 1])) == -1
        assert extract_threshold(np.array([0, 1, 0])) is None
        assert extract_threshold(np.array([0, 0, 0])) == 2

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            extract_threshold(np.array([0, 2, 1]))


class TestServiceGain:
    def test_gain_nonpositive_and_monotone_for_stable_user(self):
        p = make_params(0.25, 0.75, 15.0, 1.5, 60)
        sol = relative_value_iteration(4.0, p, KNOBS)
        gain = service_gain(sol.values, p)
        interior = gain[: p.buffer_size - BOUNDARY_MARGIN - 1]
        assert np.all(interior <= 1e-9)
        assert np.all(np.diff(interior) <= 1e-9)

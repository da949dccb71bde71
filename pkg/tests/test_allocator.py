"""QP construction, the ADMM solver against a grid-search oracle, and TEV."""

import numpy as np
import pytest

from fixsynth.allocator import (
    AllocatorError,
    Bounds,
    PortfolioProblem,
    SolverConfig,
    build_problem,
    constraint_violations,
    solve_qp,
    tev,
    tracking_objective,
)
from fixsynth.simulation import SimulationSet


def make_simset(returns, mu, kinds=None, label="Empirical", kind="FR"):
    returns = np.asarray(returns, dtype=float)
    m = returns.shape[1]
    ids = tuple(f"B{i}" if (kinds or ["bond"] * m)[i] == "bond" else f"X{i}"
                for i in range(m))
    return SimulationSet(returns=returns, mu=np.asarray(mu, dtype=float),
                         asset_ids=ids, label=label, kind=kind), \
        tuple(kinds or ["bond"] * m)


@pytest.fixture
def basic():
    rng = np.random.default_rng(0)
    returns = rng.normal(0.002, 0.02, size=(400, 4))
    mu = np.array([0.02, 0.03, 0.04, 0.05])
    return make_simset(returns, mu)


class TestBuildProblem:
    def test_gram_matrix_is_psd_symmetric(self, basic):
        simset, kinds = basic
        prob = build_problem(simset, kinds, simset.asset_ids[0], 0.001)
        assert np.allclose(prob.P, prob.P.T)
        assert np.linalg.eigvalsh(prob.P).min() >= -1e-12

    def test_benchmark_replication_is_feasible_zero(self, basic):
        simset, kinds = basic
        prob = build_problem(simset, kinds, simset.asset_ids[1], 0.0)
        e = np.zeros(4)
        e[1] = 1.0
        assert tracking_objective(prob, e) == pytest.approx(0.0, abs=1e-18)
        v = constraint_violations(prob, e)
        assert all(val <= 1e-12 for val in v.values())

    def test_fx_benchmark_rejected(self):
        rng = np.random.default_rng(1)
        simset, kinds = make_simset(rng.normal(0, 0.02, (50, 3)),
                                    [0.02, 0.03, 0.0],
                                    kinds=["bond", "bond", "fx"])
        with pytest.raises(AllocatorError, match="FX"):
            build_problem(simset, kinds, simset.asset_ids[2], 0.0)

    def test_unknown_benchmark_rejected(self, basic):
        simset, kinds = basic
        with pytest.raises(AllocatorError, match="not in universe"):
            build_problem(simset, kinds, "NOPE", 0.0)

    def test_negative_target_rejected(self, basic):
        simset, kinds = basic
        with pytest.raises(AllocatorError, match="target"):
            build_problem(simset, kinds, simset.asset_ids[0], -0.01)


class TestSolveQp:
    def test_benchmark_replication_recovered(self, basic):
        simset, kinds = basic
        prob = build_problem(simset, kinds, simset.asset_ids[2], 0.0)
        sol = solve_qp(prob)
        e = np.zeros(4)
        e[2] = 1.0
        assert sol.status == "solved"
        assert np.abs(sol.weights - e).max() <= 1e-4
        assert sol.objective <= 1e-8

    def test_solved_solution_is_feasible(self, basic):
        simset, kinds = basic
        prob = build_problem(simset, kinds, simset.asset_ids[0], 0.002)
        sol = solve_qp(prob)
        assert sol.status == "solved"
        v = constraint_violations(prob, sol.weights)
        assert v["budget"] <= 1e-6
        assert v["return_floor"] <= 1e-6
        assert v["box"] <= 1e-6

    def test_objective_no_worse_than_feasible_benchmark(self, basic):
        simset, kinds = basic
        bench = simset.asset_ids[3]       # highest mu: e_bench feasible at t=0
        prob = build_problem(simset, kinds, bench, 0.0)
        sol = solve_qp(prob)
        e = np.zeros(4)
        e[3] = 1.0
        assert sol.objective <= tracking_objective(prob, e) + 1e-8

    def test_infeasible_target_detected(self, basic):
        simset, kinds = basic
        # mu max is 5%/yr; demanding bench + 10% cannot be met
        prob = build_problem(simset, kinds, simset.asset_ids[0], 0.10)
        sol = solve_qp(prob)
        assert sol.status == "infeasible"
        assert sol.iterations < SolverConfig().max_iter

    def test_deterministic(self, basic):
        simset, kinds = basic
        prob = build_problem(simset, kinds, simset.asset_ids[1], 0.003)
        a = solve_qp(prob)
        b = solve_qp(prob)
        assert np.array_equal(a.weights, b.weights)
        assert a.iterations == b.iterations

    def test_scaling_invariance_of_argmin(self, basic):
        simset, kinds = basic
        prob = build_problem(simset, kinds, simset.asset_ids[0], 0.002)
        scaled_set = SimulationSet(returns=simset.returns * 3.0, mu=simset.mu,
                                   asset_ids=simset.asset_ids,
                                   label=simset.label, kind=simset.kind)
        prob_scaled = build_problem(scaled_set, kinds, simset.asset_ids[0], 0.002)
        a = solve_qp(prob)
        b = solve_qp(prob_scaled)
        assert a.status == b.status == "solved"
        assert np.abs(a.weights - b.weights).max() <= 1e-5


class TestGridOracle:
    def test_two_bonds_one_fx_matches_grid_search(self):
        rng = np.random.default_rng(7)
        n_sims = 500
        returns = np.column_stack([
            rng.normal(0.002, 0.015, n_sims),
            rng.normal(0.003, 0.025, n_sims),
            rng.normal(0.000, 0.030, n_sims),
        ])
        mu = np.array([0.02, 0.045, 0.01])
        simset, kinds = make_simset(returns, mu, kinds=["bond", "bond", "fx"])
        bench = simset.asset_ids[0]
        prob = build_problem(simset, kinds, bench, 0.005)
        sol = solve_qp(prob)
        assert sol.status == "solved"

        # brute-force feasible grid at 1e-3 weight resolution
        best = np.inf
        floor = mu[0] + 0.005
        for w0 in np.arange(0.0, 1.0 + 1e-12, 1e-3):
            w1 = 1.0 - w0
            # pick the fx weight greedily per grid point
            for wf in np.arange(-0.05, 0.05 + 1e-12, 1e-3):
                w = np.array([w0, w1, wf])
                if mu @ w >= floor - 1e-12:
                    obj = tracking_objective(prob, w)
                    if obj < best:
                        best = obj
        assert sol.objective == pytest.approx(best, abs=1e-5)
        assert sol.objective <= best + 1e-12


class TestTev:
    def test_identical_series_zero(self):
        x = np.array([0.01, 0.02, -0.01, 0.005])
        assert tev(x, x) == 0.0

    def test_constant_difference_zero(self):
        x = np.array([0.01, 0.02, -0.01, 0.005])
        assert tev(x + 0.001, x) == pytest.approx(0.0, abs=1e-10)

    def test_alternating_ten_bps(self):
        n = 1000
        diff = 0.001 * (-1.0) ** np.arange(n)
        got = tev(diff, np.zeros(n))
        expected = 0.001 * np.sqrt(n / (n - 1)) * np.sqrt(12) * 1e4
        assert got == pytest.approx(expected, abs=1e-9)
        assert got == pytest.approx(34.64, abs=0.1)

    def test_too_short(self):
        with pytest.raises(AllocatorError, match="at least 2"):
            tev(np.array([0.1]), np.array([0.1]))

    def test_length_mismatch(self):
        with pytest.raises(AllocatorError):
            tev(np.zeros(3), np.zeros(4))


class TestBounds:
    def test_disordered_bounds_rejected(self):
        with pytest.raises(AllocatorError, match="ordered"):
            Bounds(bond=(1.0, 0.0))

    def test_custom_bond_bounds_respected(self, basic):
        simset, kinds = basic
        prob = build_problem(simset, kinds, simset.asset_ids[0], 0.0,
                             bounds=Bounds(bond=(0.0, 0.6)))
        sol = solve_qp(prob)
        assert sol.status == "solved"
        assert np.all(sol.weights <= 0.6 + 1e-6)

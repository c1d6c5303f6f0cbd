"""Tests for the LP wrapper and branch and bound."""

import itertools
import math

import numpy as np
import pytest

from stablenet.optcore import (
    LinearProgram,
    LpStatus,
    MilpModel,
    Relation,
    SearchCallbacks,
    SearchConfig,
    SearchStatus,
    solve_lp,
    solve_milp,
    to_lp_format,
    write_lp,
)


def knapsack(values, weights, capacity):
    lp = LinearProgram()
    items = [lp.add_variable(0.0, 1.0, f"item{i}") for i in range(len(values))]
    lp.add_constraint(dict(zip(items, weights)), Relation.LE, capacity, "capacity")
    lp.set_objective(dict(zip(items, values)))
    return MilpModel(lp, frozenset(items))


def knapsack_by_enumeration(values, weights, capacity):
    best = 0.0
    for choice in itertools.product((0, 1), repeat=len(values)):
        if np.dot(choice, weights) <= capacity:
            best = max(best, float(np.dot(choice, values)))
    return best


def exposure_model():
    """max p1 + p2 with p_i <= z_i and z1 + z2 <= 1."""
    lp = LinearProgram()
    z1, z2 = lp.add_variable(0, 1, "z1"), lp.add_variable(0, 1, "z2")
    p1, p2 = lp.add_variable(0, 1, "p1"), lp.add_variable(0, 1, "p2")
    lp.add_constraint({p1: 1, z1: -1}, Relation.LE, 0)
    lp.add_constraint({p2: 1, z2: -1}, Relation.LE, 0)
    lp.add_constraint({z1: 1, z2: 1}, Relation.LE, 1)
    lp.set_objective({p1: 1, p2: 1})
    return MilpModel(lp, frozenset({z1, z2})), (z1, z2, p1, p2)


class TestLinearProgram:
    """Test LP construction and solving."""

    def test_optimum(self):
        """max x + y s.t. x + 2y <= 4, 3x + y <= 6."""
        lp = LinearProgram()
        x, y = lp.add_variable(), lp.add_variable()
        lp.add_constraint({x: 1, y: 2}, Relation.LE, 4)
        lp.add_constraint({x: 3, y: 1}, "<=", 6)
        lp.set_objective({x: 1, y: 1})
        solution = solve_lp(lp)
        assert solution.status is LpStatus.OPTIMAL
        assert solution.objective == pytest.approx(2.8, abs=1e-7)
        np.testing.assert_allclose(solution.values, [1.6, 1.2], atol=1e-7)

    def test_infeasible(self):
        """x >= 2 with x <= 1."""
        lp = LinearProgram()
        x = lp.add_variable(0, 1)
        lp.add_constraint({x: 1}, Relation.GE, 2)
        assert solve_lp(lp).status is LpStatus.INFEASIBLE

    def test_unbounded(self):
        """max x with x unbounded above."""
        lp = LinearProgram()
        x = lp.add_variable(0, math.inf)
        lp.set_objective({x: 1})
        assert solve_lp(lp).status is LpStatus.UNBOUNDED

    def test_crossed_override_bounds(self):
        """Override bounds with lb > ub are infeasible without calling HiGHS."""
        lp = LinearProgram()
        lp.add_variable(0, 1)
        assert solve_lp(lp, np.array([1.0]), np.array([0.0])).status is LpStatus.INFEASIBLE

    def test_invalid_inputs(self):
        """Bad bounds and indices are rejected."""
        lp = LinearProgram()
        with pytest.raises(ValueError, match="exceeds upper bound"):
            lp.add_variable(2, 1)
        lp.add_variable()
        with pytest.raises(ValueError, match="out of range"):
            lp.add_constraint({3: 1.0}, Relation.LE, 0)
        with pytest.raises(ValueError, match="finite"):
            lp.add_constraint({0: 1.0}, Relation.LE, math.inf)

    def test_max_violation(self):
        """Violations are scaled by 1 + |rhs|."""
        lp = LinearProgram()
        x = lp.add_variable(0, 10)
        lp.add_constraint({x: 1}, Relation.LE, 1)
        assert lp.max_violation(np.array([0.5])) == 0.0
        assert lp.max_violation(np.array([3.0])) == pytest.approx(1.0)

    def test_binary_check(self):
        """Integer variables must have binary bounds."""
        lp = LinearProgram()
        v = lp.add_variable(0, 2, "v")
        with pytest.raises(ValueError, match="must be binary"):
            MilpModel(lp, frozenset({v}))


class TestBranchAndBound:
    """Test the branch-and-bound search."""

    def test_knapsack_matches_enumeration(self):
        """Optimum equals exhaustive enumeration."""
        values, weights = [10, 13, 7, 8], [3, 4, 2, 3]
        result = solve_milp(knapsack(values, weights, 7))
        assert result.status is SearchStatus.PROVED_OPTIMAL
        assert result.best_objective == pytest.approx(knapsack_by_enumeration(values, weights, 7))
        assert result.best_objective == pytest.approx(23.0)

    def test_random_knapsacks(self, rng):
        """Several random instances agree with enumeration."""
        for _ in range(5):
            values = rng.integers(1, 20, size=6).astype(float)
            weights = rng.integers(1, 10, size=6).astype(float)
            capacity = float(weights.sum() / 2)
            result = solve_milp(knapsack(values, weights, capacity))
            assert result.best_objective == pytest.approx(knapsack_by_enumeration(values, weights, capacity))

    def test_lazy_fixes_drive_optimum_to_zero(self):
        """Fixing every exposed p proves an optimum of 0."""
        model, (z1, z2, p1, p2) = exposure_model()
        seen = []

        def on_incumbent(values):
            seen.append(values.copy())
            return [p for p in (p1, p2) if values[p] > 0.5]

        result = solve_milp(model, SearchCallbacks(on_incumbent=on_incumbent))
        assert result.status is SearchStatus.PROVED_OPTIMAL
        assert result.best_objective == pytest.approx(0.0)
        assert result.fixed_vars == frozenset({p1, p2})
        assert result.incumbents_found == len(seen) >= 2

    def test_relaxation_candidate_is_used(self):
        """A feasible candidate from on_relaxation becomes the incumbent."""
        model, (z1, z2, p1, p2) = exposure_model()
        candidate = np.zeros(4)
        candidate[[z1, p1]] = 1.0
        calls = []

        def on_relaxation(values):
            calls.append(values)
            return candidate

        result = solve_milp(model, SearchCallbacks(on_relaxation=on_relaxation))
        assert result.best_objective == pytest.approx(1.0)
        assert result.status is SearchStatus.PROVED_OPTIMAL

    def test_infeasible_candidate_is_dropped(self):
        """Candidates violating constraints are not accepted."""
        model, _ = exposure_model()
        bad = np.ones(4)
        result = solve_milp(model, SearchCallbacks(on_relaxation=lambda values: bad))
        assert result.best_objective == pytest.approx(1.0)
        assert result.best_values is not None
        assert model.lp.max_violation(result.best_values) <= 1e-6

    def test_node_limit_stops(self):
        """A node limit of 0 stops before the root."""
        result = solve_milp(knapsack([1, 2], [1, 1], 1), config=SearchConfig(node_limit=0))
        assert result.status is SearchStatus.STOPPED
        assert result.nodes_explored == 0
        assert result.best_bound == math.inf

    def test_infeasible_model(self):
        """No integral solution means INFEASIBLE."""
        lp = LinearProgram()
        z = lp.add_variable(0, 1)
        lp.add_constraint({z: 1}, Relation.GE, 2)
        result = solve_milp(MilpModel(lp, frozenset({z})))
        assert result.status is SearchStatus.INFEASIBLE

    def test_invalid_config(self):
        """Limits are validated."""
        with pytest.raises(ValueError, match="time_limit"):
            SearchConfig(time_limit=0)

    def test_repeat_solves_are_identical(self, rng):
        """The same model solved twice explores the same tree and returns the same incumbent."""
        for _ in range(3):
            values = rng.integers(1, 30, size=8).astype(float)
            weights = rng.integers(1, 12, size=8).astype(float)
            model = knapsack(values, weights, float(weights.sum() / 3))
            first, second = solve_milp(model), solve_milp(model)
            assert first.nodes_explored == second.nodes_explored
            assert first.incumbents_found == second.incumbents_found
            assert first.best_objective == second.best_objective
            np.testing.assert_array_equal(first.best_values, second.best_values)

    def test_repeat_solves_with_callbacks(self):
        """Lazy fixes do not make the search order depend on anything but the model."""
        runs = []
        for _ in range(2):
            model, (z1, z2, p1, p2) = exposure_model()
            callbacks = SearchCallbacks(on_incumbent=lambda v, p=(p1, p2): [i for i in p if v[i] > 0.5])
            runs.append(solve_milp(model, callbacks))
        assert runs[0].nodes_explored == runs[1].nodes_explored
        assert runs[0].fixed_vars == runs[1].fixed_vars

    def test_cutoff_above_optimum_prunes_root(self):
        """A cutoff no solution can beat prunes at the root and reports no incumbent."""
        values, weights = [10, 13, 7, 8], [3, 4, 2, 3]
        result = solve_milp(knapsack(values, weights, 7), config=SearchConfig(objective_cutoff=30.0))
        assert result.status is SearchStatus.INFEASIBLE
        assert result.nodes_explored == 1
        assert result.best_values is None

    def test_cutoff_below_optimum_keeps_answer(self):
        """A loose cutoff never changes the optimum and never adds nodes."""
        values, weights = [10, 13, 7, 8], [3, 4, 2, 3]
        plain = solve_milp(knapsack(values, weights, 7))
        cut = solve_milp(knapsack(values, weights, 7), config=SearchConfig(objective_cutoff=20.0))
        assert cut.status is SearchStatus.PROVED_OPTIMAL
        assert cut.best_objective == pytest.approx(23.0)
        assert cut.nodes_explored <= plain.nodes_explored


class TestLpExport:
    """Test LP-format export."""

    def test_sections(self, tmp_path):
        """The export has every section and the binaries."""
        model = knapsack([10, 13], [3, 4], 5)
        text = to_lp_format(model)
        for section in ("Maximize", "Subject To", "Bounds", "Binaries", "End"):
            assert section in text
        assert " capacity: + 3 item0 + 4 item1 <= 5" in text
        write_lp(model, tmp_path / "model.lp")
        assert (tmp_path / "model.lp").read_text(encoding="utf-8") == text

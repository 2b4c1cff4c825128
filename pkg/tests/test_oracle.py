from __future__ import annotations

import numpy as np
import pytest

from mcnlm.core import InfeasibleError
from mcnlm.oracle import (
    enumerate_active_sets, enumerate_estimator, grid_solve_pattern, problem_objective,
)
from mcnlm.sampling import optimal_pattern, uniform_pattern

B4 = np.array([0.9, 0.5, 0.1, 0.05])


def test_three_point_instance_has_eight_atoms():
    dist = enumerate_estimator(np.ones(3), np.array([0.0, 0.5, 1.0]), uniform_pattern(3, 0.5))
    assert dist.values.size == 8
    assert np.allclose(dist.probs, 1 / 8)


def test_enumeration_size_limit():
    with pytest.raises(ValueError):
        enumerate_estimator(np.ones(21), np.zeros(21), uniform_pattern(21, 0.5))


def test_grid_solver_matches_closed_form_on_four_points():
    assert np.allclose(grid_solve_pattern(B4, 0.5), optimal_pattern(B4, 0.5).probs, atol=1e-4)


def test_grid_solver_objective_not_worse():
    p_closed = optimal_pattern(B4, 0.5).probs
    p_grid = grid_solve_pattern(B4, 0.5)
    assert problem_objective(B4, p_grid, 1.0) <= problem_objective(B4, p_closed, 1.0) + 1e-6


def test_active_sets_simple_and_infeasible():
    p, count = enumerate_active_sets(np.array([1.0, 1.0]), 1.0, 0.0)
    assert np.allclose(p, 0.5) and count == 9
    with pytest.raises(InfeasibleError):
        enumerate_active_sets(np.array([1.0, 1.0]), 3.0, 0.0)

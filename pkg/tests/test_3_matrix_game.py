import pytest
from itertools import combinations

import numpy as np

from src.envelope import BeliefGrid
from src.game_model import AbstractU, DimensionMismatchError
from src.matrix_game import (
    MatrixGame,
    average_game,
    average_game_field,
    average_game_value,
    game_values,
    solve,
    solve_2x2_batch,
    u_evaluator,
)


def support_enumeration_value(M, tol=1e-9):
    """Value of M by trying every pair of equal-size supports."""
    n_rows, n_cols = M.shape
    for k in range(1, min(n_rows, n_cols) + 1):
        for rows in combinations(range(n_rows), k):
            for cols in combinations(range(n_cols), k):
                sub = M[np.ix_(rows, cols)]
                system = np.zeros((k + 1, k + 1))
                system[:k, :k] = sub
                system[:k, k] = -1.0
                system[k, :k] = 1.0
                rhs = np.zeros(k + 1)
                rhs[k] = 1.0
                try:
                    y_part = np.linalg.solve(system, rhs)
                    dual = system.copy()
                    dual[:k, :k] = sub.T
                    x_part = np.linalg.solve(dual, rhs)
                except np.linalg.LinAlgError:
                    continue
                if y_part[:k].min() < -tol or x_part[:k].min() < -tol:
                    continue
                x = np.zeros(n_rows)
                y = np.zeros(n_cols)
                x[list(rows)] = x_part[:k]
                y[list(cols)] = y_part[:k]
                value = y_part[k]
                if (M @ y).max() <= value + tol and (x @ M).min() >= value - tol:
                    return value
    raise AssertionError("no equilibrium found")


@pytest.mark.dependency()
class TestSolve:
    """Exact values and optimal strategies of matrix games."""

    @pytest.mark.dependency()
    def test_matching_pennies(self):
        solution = solve([[1.0, -1.0], [-1.0, 1.0]])
        assert solution.value == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(solution.x_star, [0.5, 0.5])
        assert np.allclose(solution.y_star, [0.5, 0.5])

    @pytest.mark.dependency(depends=["TestSolve::test_matching_pennies"])
    def test_pure_saddle_smallest_indices(self):
        solution = solve([[1.0, 1.0], [1.0, 1.0]])
        assert solution.value == 1.0
        assert np.array_equal(solution.x_star, [1.0, 0.0])
        assert np.array_equal(solution.y_star, [1.0, 0.0])
        solution = solve([[3.0, 1.0, 4.0], [2.0, 0.0, 5.0]])
        assert solution.value == 1.0

    @pytest.mark.dependency(depends=["TestSolve::test_matching_pennies"])
    def test_single_row_and_column(self):
        assert solve([[2.0, -1.0, 3.0]]).value == -1.0
        assert solve([[2.0], [-1.0], [3.0]]).value == 3.0

    @pytest.mark.dependency(depends=["TestSolve::test_matching_pennies"])
    def test_against_support_enumeration(self):
        """Duality gap and value agree with brute force on 200 random games"""
        rng = np.random.default_rng(2024)
        for _ in range(200):
            shape = tuple(rng.integers(1, 4, size=2))
            M = rng.uniform(-1.0, 1.0, size=shape)
            solution = solve(M)
            lower = (solution.x_star @ M).min()
            upper = (M @ solution.y_star).max()
            assert upper - lower <= 1e-9
            assert solution.value == pytest.approx(support_enumeration_value(M), abs=1e-9)
            assert solution.x_star.sum() == pytest.approx(1.0)
            assert solution.y_star.min() >= 0.0

    @pytest.mark.dependency(depends=["TestSolve::test_matching_pennies"])
    def test_invalid_games(self):
        with pytest.raises(ValueError, match="finite"):
            MatrixGame([[np.inf, 0.0]])
        with pytest.raises(ValueError, match="2-D"):
            MatrixGame([1.0, 2.0])
        with pytest.raises(ValueError, match="tol"):
            solve([[1.0]], tol=0.0)


def test_batch_2x2_matches_solve():
    rng = np.random.default_rng(7)
    matrices = rng.uniform(-1.0, 1.0, size=(300, 2, 2))
    values, x, y = solve_2x2_batch(matrices)
    for k in range(len(matrices)):
        assert values[k] == pytest.approx(solve(matrices[k]).value, abs=1e-9)
        assert (x[k] @ matrices[k]).min() == pytest.approx(values[k], abs=1e-9)
        assert (matrices[k] @ y[k]).max() == pytest.approx(values[k], abs=1e-9)
    assert np.allclose(game_values(matrices), values)


def test_average_game(example_spec):
    assert np.allclose(average_game(example_spec, [0.3, 0.7]), [[0.3, 0.0], [0.0, 0.7]])
    # u(p) = p(1 - p) for the switching example
    for p in (0.0, 0.2, 0.5, 0.9):
        assert average_game_value(example_spec, [p, 1.0 - p]) == pytest.approx(p * (1.0 - p), abs=1e-12)
    with pytest.raises(DimensionMismatchError):
        average_game(example_spec, [0.2, 0.3, 0.5])


def test_u_evaluator_and_field(example_spec):
    grid = BeliefGrid(2, 10)
    field = average_game_field(example_spec, grid)
    p = grid.points[:, 0]
    assert np.allclose(field.values, p * (1.0 - p), atol=1e-12)
    evaluate = u_evaluator(example_spec)
    assert evaluate([0.25, 0.75]) == pytest.approx(0.1875)

    table = AbstractU(grid_resolution=10, values=p * (1.0 - p))
    assert u_evaluator(table)(np.array([[0.25, 0.75]]))[0] == pytest.approx(0.1875, abs=3e-3)
    assert np.array_equal(average_game_field(table, grid).values, table.values)
    with pytest.raises(TypeError):
        u_evaluator("not a game")

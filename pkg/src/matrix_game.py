"""
Finite Zero-Sum Matrix Games

Exact value and optimal mixed strategies of a matrix game M[a][b] (payoff
to the row player, who maximizes), plus the average game
g(p, a, b) = sum_s p(s) g(s, a, b) whose value is the non-revealing value u(p).

Algorithm:
1. Pure saddle test; the saddle with smallest row and column indices wins
2. Otherwise shift M to be positive and solve
   max sum(w) s.t. M'w <= 1, w >= 0 with a dense simplex tableau and
   Bland's rule; y = w / sum(w), x is read off the slack reduced costs
3. If pivoting stalls, restart once from a slightly perturbed right-hand side
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from src.game_model import GameSpec, AbstractU, as_belief
from src.utils import parallel_map

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
PIVOT_EPS = 1e-12


class MatrixGameSolution(NamedTuple):
    value: float
    x_star: np.ndarray
    y_star: np.ndarray


@dataclass(frozen=True, eq=False)
class MatrixGame:
    """A finite zero-sum game; matrix[a][b] is paid by the column player to the row player."""
    matrix: np.ndarray

    def __post_init__(self):
        arr = np.array(self.matrix, dtype=float)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"Matrix game needs a non-empty 2-D payoff matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Matrix game payoffs must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, 'matrix', arr)

    @property
    def shape(self):
        return self.matrix.shape


def _pure_saddle(M):
    row_mins = M.min(axis=1)
    col_maxes = M.max(axis=0)
    if row_mins.max() < col_maxes.min():
        return None
    i = int(np.argmax(row_mins))
    j = int(np.argmin(col_maxes))
    x = np.zeros(M.shape[0])
    y = np.zeros(M.shape[1])
    x[i] = 1.0
    y[j] = 1.0
    return MatrixGameSolution(float(M[i, j]), x, y)


def _simplex(P, rhs, max_pivots):
    """
    Maximize sum(w) subject to P w <= rhs, w >= 0, with P > 0 and rhs > 0.

    Returns:
        tuple: (w, duals, status) where status is 'optimal' or 'stalled'
    """
    n_rows, n_cols = P.shape
    tableau = np.zeros((n_rows + 1, n_cols + n_rows + 1))
    tableau[:n_rows, :n_cols] = P
    tableau[:n_rows, n_cols:n_cols + n_rows] = np.eye(n_rows)
    tableau[:n_rows, -1] = rhs
    tableau[-1, :n_cols] = -1.0
    basis = list(range(n_cols, n_cols + n_rows))

    for pivots in range(max_pivots):
        reduced = tableau[-1, :-1]
        candidates = np.flatnonzero(reduced < -PIVOT_EPS)
        if candidates.size == 0:
            w = np.zeros(n_cols)
            for row, var in enumerate(basis):
                if var < n_cols:
                    w[var] = tableau[row, -1]
            return w, tableau[-1, n_cols:n_cols + n_rows].copy(), 'optimal'
        j = int(candidates[0])

        column = tableau[:n_rows, j]
        rows = np.flatnonzero(column > PIVOT_EPS)
        ratios = tableau[rows, -1] / column[rows]
        best = ratios.min()
        tied = rows[ratios <= best + PIVOT_EPS * max(1.0, abs(best))]
        i = int(min(tied, key=lambda r: basis[r]))

        tableau[i] /= tableau[i, j]
        for k in range(n_rows + 1):
            if k != i and tableau[k, j] != 0.0:
                tableau[k] -= tableau[k, j] * tableau[i]
        basis[i] = j

    return None, None, 'stalled'


def solve(game, tol=DEFAULT_TOL):
    """
    Solve a zero-sum matrix game exactly.

    Args:
        game (MatrixGame or array-like): Payoff matrix to the maximizer
        tol (float): Accepted duality gap

    Returns:
        MatrixGameSolution: (value, x_star over rows, y_star over columns)

    Raises:
        ValueError: If tol is not positive or the matrix is invalid
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if not isinstance(game, MatrixGame):
        game = MatrixGame(game)
    M = game.matrix

    saddle = _pure_saddle(M)
    if saddle is not None:
        return saddle

    shift = 1.0 - M.min()
    P = M + shift
    n_rows, n_cols = P.shape
    max_pivots = 50 * (n_rows + n_cols) + 100

    rhs = np.ones(n_rows)
    w, duals, status = _simplex(P, rhs, max_pivots)
    if status != 'optimal':
        logger.warning(f"Simplex stalled on a {M.shape} game, restarting from a perturbed right-hand side")
        rhs = 1.0 + 1e-10 * np.arange(1, n_rows + 1)
        w, duals, status = _simplex(P, rhs, max_pivots)
        if status != 'optimal':
            raise RuntimeError(f"Simplex failed to converge on a {M.shape} game")

    x = np.clip(duals, 0.0, None)
    y = np.clip(w, 0.0, None)
    x /= x.sum()
    y /= y.sum()

    lower = float((x @ M).min())
    upper = float((M @ y).max())
    value = 1.0 / w.sum() - shift
    if upper - lower > tol:
        logger.warning(f"Duality gap {upper - lower:.3e} exceeds tolerance {tol:.1e}")
        value = 0.5 * (lower + upper)
    return MatrixGameSolution(float(value), x, y)


def solve_2x2_batch(matrices):
    """
    Solve many 2x2 games at once.

    Args:
        matrices (array-like): Shape (N, 2, 2)

    Returns:
        tuple: (values (N,), x (N, 2), y (N, 2))
    """
    M = np.asarray(matrices, dtype=float)
    if M.ndim != 3 or M.shape[1:] != (2, 2):
        raise ValueError(f"Expected shape (N, 2, 2), got {M.shape}")
    n = M.shape[0]
    a, b, c, d = M[:, 0, 0], M[:, 0, 1], M[:, 1, 0], M[:, 1, 1]

    row_mins = M.min(axis=2)
    col_maxes = M.max(axis=1)
    maxmin = row_mins.max(axis=1)
    minmax = col_maxes.min(axis=1)
    saddle = maxmin >= minmax

    den = a - b - c + d
    safe = np.where(saddle | (den == 0.0), 1.0, den)
    x1 = np.clip((d - c) / safe, 0.0, 1.0)
    y1 = np.clip((d - b) / safe, 0.0, 1.0)
    mixed_value = (a * d - b * c) / safe

    i = np.argmax(row_mins, axis=1)
    j = np.argmin(col_maxes, axis=1)
    idx = np.arange(n)
    pure_value = M[idx, i, j]

    x = np.column_stack([x1, 1.0 - x1])
    y = np.column_stack([y1, 1.0 - y1])
    x[saddle] = 0.0
    y[saddle] = 0.0
    x[idx[saddle], i[saddle]] = 1.0
    y[idx[saddle], j[saddle]] = 1.0
    values = np.where(saddle, pure_value, mixed_value)
    return values, x, y


def average_game(spec, p):
    """The matrix sum_s p(s) g(s, ., .)."""
    p = as_belief(p, spec.n_states)
    return np.tensordot(p, spec.payoff, axes=1)


def average_game_value(spec, p, tol=DEFAULT_TOL):
    """
    Non-revealing value u(p): value of the average game at belief p.

    Raises:
        DimensionMismatchError: If p does not match the spec's states
    """
    return solve(MatrixGame(average_game(spec, p)), tol).value


def game_values(matrices, tol=DEFAULT_TOL):
    """Values of a stack of games, (N, A, B) -> (N,)."""
    matrices = np.asarray(matrices, dtype=float)
    if matrices.shape[1:] == (2, 2):
        return solve_2x2_batch(matrices)[0]
    return np.array(parallel_map(lambda m: solve(m, tol).value, list(matrices)))


def u_evaluator(source, tol=DEFAULT_TOL):
    """
    Vectorized u for a GameSpec (LP per belief) or an AbstractU (table interpolation).

    Returns:
        callable: points of shape (N, S) or (S,) -> values of shape (N,) or scalar
    """
    if isinstance(source, AbstractU):
        from src.envelope import BeliefGrid, ValueField
        field = ValueField(BeliefGrid(source.n_states, source.grid_resolution), source.values)
        return field.evaluate
    if not isinstance(source, GameSpec):
        raise TypeError(f"Cannot evaluate u for {type(source).__name__}")

    payoff = source.payoff

    def evaluate(points):
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != source.n_states:
            raise ValueError(f"Beliefs have {pts.shape[1]} coordinates, expected {source.n_states}")
        values = game_values(np.einsum('ns,sab->nab', pts, payoff), tol)
        return float(values[0]) if single else values

    return evaluate


def average_game_field(source, grid, tol=DEFAULT_TOL):
    """u sampled on every point of a BeliefGrid, as a ValueField."""
    from src.envelope import ValueField
    if isinstance(source, AbstractU) and source.grid_resolution == grid.resolution \
            and source.n_states == grid.n_states:
        return ValueField(grid, source.values)
    logger.debug(f"Sampling u on {grid.size} grid points")
    return ValueField(grid, u_evaluator(source, tol)(grid.points))

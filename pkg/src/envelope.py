"""
Concave and Convex Envelopes on Belief Grids

Functions of the belief are sampled on the regular grid
{k/m : k in N^S, sum(k) = m} of the simplex and interpolated piecewise
linearly. cav f is the smallest majorant that is concave along every
lattice line of the grid; vex f = -cav(-f).

Grid Layout:
- Points are listed in lexicographic order of their counts k
- Two states: point i is (i/m, (m-i)/m), so the first coordinate grows with i
- Three states: point (i, j, m-i-j) sits at index i(m+1) - i(i-1)/2 + j and
  cells are split into the triangles {(i,j),(i+1,j),(i,j+1)} and
  {(i+1,j),(i,j+1),(i+1,j+1)}
- Lattice lines follow the directions e_t - e_s; along each of them the
  grid is uniform, so 1-D envelopes apply directly

Envelope Algorithm:
1. One line: upper hull by the monotone chain scan, then linear interpolation
   between hull vertices
2. Three states: sweep all lattice lines until no value rises by more than
   1e-12 (capped at 10^4 sweeps)
3. More than three states: rejected
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
import pandas as pd

from src.game_model import UnsupportedDimensionError, grid_point_count

logger = logging.getLogger(__name__)

MAX_GRID_STATES = 3
SIMPLEX_TOL = 1e-9
SNAP_TOL = 1e-9
SWEEP_TOL = 1e-12
MAX_SWEEPS = 10_000
CONCAVE_EPS = 1e-15


def _compositions(total, parts):
    if parts == 1:
        return [(total,)]
    return [(k,) + rest for k in range(total + 1) for rest in _compositions(total - k, parts - 1)]


def _require_grid_dimension(n_states):
    if n_states > MAX_GRID_STATES:
        raise UnsupportedDimensionError(
            f"Grid methods support at most {MAX_GRID_STATES} states, got {n_states}")


@dataclass(frozen=True)
class BeliefGrid:
    """Regular barycentric grid of resolution m on the simplex over n_states states."""
    n_states: int
    resolution: int

    def __post_init__(self):
        if self.n_states < 1:
            raise ValueError(f"Grid needs at least one state, got {self.n_states}")
        if self.resolution < 1:
            raise ValueError(f"Grid resolution must be positive, got {self.resolution}")

    @property
    def h(self):
        return 1.0 / self.resolution

    @property
    def size(self):
        return grid_point_count(self.n_states, self.resolution)

    @cached_property
    def counts(self):
        counts = np.array(_compositions(self.resolution, self.n_states), dtype=int)
        counts.setflags(write=False)
        return counts

    @cached_property
    def points(self):
        points = self.counts / self.resolution
        points.setflags(write=False)
        return points

    def index_of(self, counts):
        """Grid index of integer count vectors, shape (N, S) -> (N,)."""
        _require_grid_dimension(self.n_states)
        counts = np.atleast_2d(counts)
        m = self.resolution
        if self.n_states == 1:
            return np.zeros(len(counts), dtype=int)
        if self.n_states == 2:
            return counts[:, 0].astype(int)
        i, j = counts[:, 0], counts[:, 1]
        return (i * (m + 1) - i * (i - 1) // 2 + j).astype(int)

    def shift(self, s, t):
        """
        Neighbours one step along e_t - e_s.

        Returns:
            tuple: (valid mask, neighbour index) for every grid point; invalid
                where the point has no mass on s
        """
        counts = np.array(self.counts)
        valid = counts[:, s] >= 1
        counts[:, s] -= 1
        counts[:, t] += 1
        target = np.where(valid, self.index_of(np.where(valid[:, None], counts, self.counts)), -1)
        return valid, target

    @cached_property
    def lines(self):
        """Index arrays of every lattice line with at least three points, in order along the line."""
        _require_grid_dimension(self.n_states)
        m = self.resolution
        if self.n_states == 1 or m < 2:
            return []
        if self.n_states == 2:
            return [np.arange(m + 1)]
        lines = []
        counts = self.counts
        # (moving coordinate, frozen coordinate) for e0-e1, e1-e2, e0-e2
        for t, fixed in ((0, 2), (1, 0), (0, 1)):
            for c in range(m - 1):
                members = np.flatnonzero(counts[:, fixed] == c)
                lines.append(members[np.argsort(counts[members, t], kind='stable')])
        return lines

    def stencil(self, points):
        """
        Piecewise-linear interpolation weights for arbitrary beliefs.

        Args:
            points (array-like): Beliefs, shape (N, S)

        Returns:
            tuple: (indices (N, K), weights (N, K)) with K = S

        Raises:
            ValueError: If a belief lies outside the simplex by more than 1e-9
            UnsupportedDimensionError: For more than three states
        """
        _require_grid_dimension(self.n_states)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.n_states:
            raise ValueError(f"Beliefs have {pts.shape[1]} coordinates, expected {self.n_states}")
        outside = (pts.min(axis=1) < -SIMPLEX_TOL) | (np.abs(pts.sum(axis=1) - 1.0) > SIMPLEX_TOL)
        if np.any(outside):
            raise ValueError(f"{int(outside.sum())} beliefs lie outside the simplex, e.g. {pts[outside][0].tolist()}")
        pts = np.clip(pts, 0.0, None)
        pts = pts / pts.sum(axis=1, keepdims=True)

        n = len(pts)
        m = self.resolution
        if self.n_states == 1:
            return np.zeros((n, 1), dtype=int), np.ones((n, 1))

        scaled = pts[:, :-1] * m
        snapped = np.rint(scaled)
        scaled = np.where(np.abs(scaled - snapped) <= SNAP_TOL * m, snapped, scaled)

        if self.n_states == 2:
            x = scaled[:, 0]
            i = np.clip(np.floor(x), 0, m - 1).astype(int)
            f = x - i
            return np.column_stack([i, i + 1]), np.column_stack([1.0 - f, f])

        a, b = scaled[:, 0], scaled[:, 1]
        i = np.clip(np.floor(a), 0, m - 1).astype(int)
        j = np.clip(np.floor(b), 0, m - 1 - i).astype(int)
        fx, fy = a - i, b - j
        upper = (fx + fy > 1.0) & (i + j <= m - 2)

        def at(ii, jj):
            return ii * (m + 1) - ii * (ii - 1) // 2 + jj

        idx = np.column_stack([at(i, j), at(i + 1, j), at(i, j + 1)])
        w = np.column_stack([1.0 - fx - fy, fx, fy])
        if np.any(upper):
            iu, ju = i[upper], j[upper]
            idx[upper] = np.column_stack([at(iu + 1, ju + 1), at(iu + 1, ju), at(iu, ju + 1)])
            w[upper] = np.column_stack([fx[upper] + fy[upper] - 1.0, 1.0 - fy[upper], 1.0 - fx[upper]])
        return idx, w


@dataclass(frozen=True, eq=False)
class ValueField:
    """A function of the belief sampled on a BeliefGrid (u, cav u, v_n, v, ...)."""
    grid: BeliefGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.size,):
            raise ValueError(f"Field has {values.size} values, grid has {self.grid.size} points")
        if not np.all(np.isfinite(values)):
            raise ValueError("Field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    def evaluate(self, points):
        """Interpolated values at beliefs of shape (N, S) or (S,)."""
        pts = np.asarray(points, dtype=float)
        idx, w = self.grid.stencil(pts)
        out = (self.values[idx] * w).sum(axis=1)
        return float(out[0]) if pts.ndim == 1 else out

    def with_values(self, values):
        return ValueField(self.grid, values)

    def sup_distance(self, other):
        if isinstance(other, ValueField):
            other = other.values
        return float(np.abs(self.values - np.asarray(other, dtype=float)).max())

    def to_frame(self, labels=None, name='value'):
        """One row per grid point: p_<label> coordinates and the value column."""
        labels = labels or [f"s{i + 1}" for i in range(self.grid.n_states)]
        frame = pd.DataFrame(self.grid.points, columns=[f"p_{label}" for label in labels])
        frame[name] = self.values
        return frame


def _hull_vertices(y):
    """Upper hull vertex indices of (i, y[i]) by the monotone chain scan."""
    hull = []
    for j, yj in enumerate(y):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            if (b - a) * (yj - y[a]) - (y[b] - y[a]) * (j - a) >= 0:
                hull.pop()
            else:
                break
        hull.append(j)
    return hull


def _batched_hull_mask(Z):
    """Hull vertex masks for many lines at once, shape (L, n)."""
    k, n = Z.shape
    rows = np.arange(k)
    stack = np.zeros((k, n), dtype=int)
    stack[:, 1] = 1
    size = np.full(k, 2)
    for j in range(2, n):
        while True:
            a = stack[rows, np.maximum(size - 2, 0)]
            b = stack[rows, size - 1]
            cross = (b - a) * (Z[:, j] - Z[rows, a]) - (Z[rows, b] - Z[rows, a]) * (j - a)
            pop = (size >= 2) & (cross >= 0)
            if not pop.any():
                break
            size[pop] -= 1
        stack[rows, size] = j
        size += 1
    mask = np.zeros((k, n), dtype=bool)
    filled = np.arange(n)[None, :] < size[:, None]
    mask[np.repeat(rows, size), stack[filled]] = True
    return mask


def concavify_lines(Y):
    """
    Smallest concave majorant of every row of Y on the uniform grid 0..n-1.

    Rows that are already concave (second differences <= 1e-15 relative)
    are returned unchanged.
    """
    Y = np.array(Y, dtype=float)
    if Y.ndim != 2:
        raise ValueError(f"Expected a 2-D array of lines, got shape {Y.shape}")
    k, n = Y.shape
    if n < 3 or k == 0:
        return Y
    d2 = Y[:, :-2] - 2.0 * Y[:, 1:-1] + Y[:, 2:]
    scale = np.maximum(1.0, np.abs(Y).max(axis=1))
    todo = np.flatnonzero((d2 > CONCAVE_EPS * scale[:, None]).any(axis=1))
    if todo.size == 0:
        return Y

    Z = Y[todo]
    if len(todo) == 1:
        mask = np.zeros((1, n), dtype=bool)
        mask[0, _hull_vertices(Z[0].tolist())] = True
    else:
        mask = _batched_hull_mask(Z)

    idx = np.arange(n)
    left = np.maximum.accumulate(np.where(mask, idx, 0), axis=1)
    right = np.flip(np.minimum.accumulate(np.flip(np.where(mask, idx, n - 1), axis=1), axis=1), axis=1)
    y_left = np.take_along_axis(Z, left, axis=1)
    y_right = np.take_along_axis(Z, right, axis=1)
    span = right - left
    frac = np.divide(idx - left, span, out=np.zeros(span.shape), where=span > 0)
    Y[todo] = np.maximum(Z, y_left + frac * (y_right - y_left))
    return Y


def concavify_line(values):
    """Smallest concave majorant of values on a uniform 1-D grid."""
    return concavify_lines(np.asarray(values, dtype=float)[None, :])[0]


def _cav_values(grid, values):
    _require_grid_dimension(grid.n_states)
    if grid.n_states == 1 or grid.resolution < 2:
        return np.array(values, dtype=float)
    if grid.n_states == 2:
        return concavify_line(values)

    v = np.array(values, dtype=float)
    for sweep in range(1, MAX_SWEEPS + 1):
        raised = 0.0
        for line in grid.lines:
            new = concavify_line(v[line])
            raised = max(raised, float((new - v[line]).max()))
            v[line] = new
        logger.debug(f"cav sweep {sweep}: max raise {raised:.3e}")
        if raised <= SWEEP_TOL:
            return v
    logger.warning(f"cav sweeps stopped at the cap of {MAX_SWEEPS} with raise {raised:.3e}")
    return v


def cav(field):
    """
    Concave envelope of a sampled function.

    Args:
        field (ValueField): Function on a grid with at most three states

    Returns:
        ValueField: Smallest majorant concave along every lattice line

    Raises:
        UnsupportedDimensionError: For more than three states
    """
    return field.with_values(_cav_values(field.grid, field.values))


def vex(field):
    """Convex envelope: -cav(-f)."""
    return field.with_values(-_cav_values(field.grid, -field.values))


class ConcavityCheck(NamedTuple):
    ok: bool
    worst_violation: float
    worst_point: np.ndarray


def is_concave(field, tol=1e-9):
    """
    Check every second difference along lattice lines is at most tol.

    Returns:
        ConcavityCheck: ok flag, the largest second difference found and the
            belief where it sits (None when the grid has no interior lines)
    """
    worst, where = -np.inf, None
    for line in field.grid.lines:
        y = field.values[line]
        d2 = y[:-2] - 2.0 * y[1:-1] + y[2:]
        k = int(np.argmax(d2))
        if d2[k] > worst:
            worst, where = float(d2[k]), line[k + 1]
    if where is None:
        return ConcavityCheck(True, 0.0, None)
    return ConcavityCheck(worst <= tol, worst, np.array(field.grid.points[where]))


def is_convex(field, tol=1e-9):
    return is_concave(field.with_values(-field.values), tol)


@dataclass(frozen=True)
class ProductGrid:
    """
    Grid on [0,1] x [0,1] for two-state by two-state games.

    values[i, j] sits at (p1, p2) = (i/m1, j/m2) where p1 and p2 are the
    probabilities of the first state of each side.
    """
    resolution1: int
    resolution2: int

    def __post_init__(self):
        if self.resolution1 < 1 or self.resolution2 < 1:
            raise ValueError(f"Grid resolutions must be positive, got {self.resolution1}x{self.resolution2}")

    @property
    def shape(self):
        return (self.resolution1 + 1, self.resolution2 + 1)

    @property
    def h1(self):
        return 1.0 / self.resolution1

    @property
    def h2(self):
        return 1.0 / self.resolution2

    @cached_property
    def axes(self):
        return (np.arange(self.resolution1 + 1) / self.resolution1,
                np.arange(self.resolution2 + 1) / self.resolution2)

    @cached_property
    def mesh(self):
        x1, x2 = self.axes
        return np.meshgrid(x1, x2, indexing='ij')

    def cav_p1(self, values):
        """Concavify along p1 for every fixed p2."""
        return concavify_lines(np.asarray(values, dtype=float).T).T

    def vex_p2(self, values):
        """Convexify along p2 for every fixed p1."""
        return -concavify_lines(-np.asarray(values, dtype=float))

    def concavity_violation_p1(self, values):
        V = np.asarray(values, dtype=float)
        if V.shape[0] < 3:
            return 0.0
        return float(max(0.0, (V[:-2] - 2.0 * V[1:-1] + V[2:]).max()))

    def convexity_violation_p2(self, values):
        V = np.asarray(values, dtype=float)
        if V.shape[1] < 3:
            return 0.0
        return float(max(0.0, -(V[:, :-2] - 2.0 * V[:, 1:-1] + V[:, 2:]).min()))

    def evaluate(self, values, p1, p2):
        """Bilinear interpolation at (p1, p2) in [0,1]^2."""
        V = np.asarray(values, dtype=float)
        p1, p2 = np.atleast_1d(p1).astype(float), np.atleast_1d(p2).astype(float)
        if np.any((p1 < -SIMPLEX_TOL) | (p1 > 1 + SIMPLEX_TOL) | (p2 < -SIMPLEX_TOL) | (p2 > 1 + SIMPLEX_TOL)):
            raise ValueError("Beliefs lie outside [0, 1]")
        x = np.clip(p1, 0, 1) * self.resolution1
        y = np.clip(p2, 0, 1) * self.resolution2
        i = np.clip(np.floor(x), 0, self.resolution1 - 1).astype(int)
        j = np.clip(np.floor(y), 0, self.resolution2 - 1).astype(int)
        fx, fy = x - i, y - j
        return ((1 - fx) * (1 - fy) * V[i, j] + fx * (1 - fy) * V[i + 1, j]
                + (1 - fx) * fy * V[i, j + 1] + fx * fy * V[i + 1, j + 1])

    def to_frame(self, values, name='value'):
        x1, x2 = self.mesh
        return pd.DataFrame({'p1': x1.ravel(), 'p2': x2.ravel(), name: np.asarray(values).ravel()})

"""
Limit Hamilton-Jacobi Equations

The limit value of the one-sided game solves the obstacle problem

    min{ r v + H(p, Dv) ; -lambda_max(p, D^2 v) } = 0   on the simplex,

    H(p, xi) = min_x max_y { -<R(x,y)^T p, xi> - r g(p, x, y) },

and the two-sided value solves the double obstacle problem (concave in p1,
convex in p2) on [0,1] x [0,1].

Scheme:
1. Gradients xi are taken along e_k - e_{S-1}, so xi has a zero last entry
2. The drift f = R(x*,y*)^T p is written as sum_{s,t} a_st (e_t - e_s) with
   a_st >= 0 moving mass from components with f_s < 0 to components with
   f_t > 0; each term is an upwind difference toward the grid neighbour
   p + h (e_t - e_s), which exists whenever a_st > 0
3. One pseudo-time step is implicit:
   (I/dtau + r + L) w = v/dtau + r g(p, x*, y*), dtau = cfl h / max drift
4. The step is followed by the projection v = cav(w) (cav in p1 then vex in p2
   for the two-sided problem); points the projection raises are obstacle_active
5. Iterate until the sup-norm change is below tol
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized, spsolve

from src.envelope import BeliefGrid, ProductGrid, ValueField, cav
from src.game_model import AbstractU, GameSpec, GameSpecTwoSided, UnsupportedDimensionError, as_belief
from src.matrix_game import average_game_field, game_values, solve, solve_2x2_batch
from src.utils import ConvergenceError, parallel_map

logger = logging.getLogger(__name__)

PDE_ACTIVE = 'pde_active'
OBSTACLE_ACTIVE = 'obstacle_active'
HAMILTONIAN_KINDS = ('exogenous', 'endogenous', 'two_sided')
OSCILLATION_ROUNDS = 100


class OscillationError(ConvergenceError):
    """The cav/vex projections of the double obstacle iteration keep cycling."""


def _saddles(matrices):
    """min_x max_y of a stack (N, A, B): (values, x (N, A), y (N, B))."""
    matrices = np.asarray(matrices, dtype=float)
    if matrices.shape[1:] == (2, 2):
        values, x, y = solve_2x2_batch(-matrices)
        return -values, x, y
    solutions = parallel_map(lambda m: solve(-m), list(matrices))
    values = np.array([-s.value for s in solutions])
    return values, np.array([s.x_star for s in solutions]), np.array([s.y_star for s in solutions])


class Hamiltonian:
    """
    H(p, xi) of a one-sided game (exogenous or endogenous kind) or of a
    two-sided game.

    Args:
        source (GameSpec, AbstractU or GameSpecTwoSided): The game; an AbstractU
            must carry an exogenous rate and a discount
    """

    def __init__(self, source):
        self.source = source
        self._u_cache = {}
        if isinstance(source, GameSpecTwoSided):
            self.kind = 'two_sided'
        elif isinstance(source, AbstractU):
            source.require_dynamics()
            self.kind = 'exogenous'
        elif isinstance(source, GameSpec):
            self.kind = 'exogenous' if source.is_exogenous else 'endogenous'
        else:
            raise TypeError(f"No Hamiltonian for {type(source).__name__}")
        self.r = source.discount

    @property
    def n_states(self):
        return self.source.n_states

    def u_field(self, grid):
        """u sampled on a BeliefGrid (cached per grid)."""
        if grid not in self._u_cache:
            self._u_cache[grid] = average_game_field(self.source, grid)
        return self._u_cache[grid]

    def _drift(self, points, a=None, b=None):
        """R(a,b)^T p for beliefs (N, S)."""
        R = self.source.rate.generator(a, b)
        return np.asarray(points) @ R

    def payoff_matrices(self, points, xis):
        """M[n][a][b] = -<R(a,b)^T p, xi> - r g(p, a, b) for one-sided kinds."""
        spec = self.source
        tensor = spec.rate.as_tensor(spec.n_actions1, spec.n_actions2)
        drift = np.einsum('ns,stab->ntab', points, tensor)
        stage = np.einsum('ns,sab->nab', points, spec.payoff)
        return -np.einsum('ntab,nt->nab', drift, xis) - self.r * stage

    def _two_sided_matrices(self, p1, p2, xi1, xi2):
        spec = self.source
        P1 = np.column_stack([p1, 1.0 - p1])
        P2 = np.column_stack([p2, 1.0 - p2])
        drift1 = np.einsum('ns,sa->na', P1, spec.rate1[:, 0, :])
        drift2 = np.einsum('ns,sb->nb', P2, spec.rate2[:, 0, :])
        stage = np.einsum('ns,nt,stab->nab', P1, P2, spec.payoff)
        return -(xi1[:, None, None] * drift1[:, :, None] + xi2[:, None, None] * drift2[:, None, :]) - self.r * stage

    def evaluate_batch(self, points, xis):
        """H at many (p, xi) pairs; for two_sided, points and xis are (p1, p2) and (xi1, xi2) arrays."""
        if self.kind == 'two_sided':
            (p1, p2), (xi1, xi2) = points, xis
            return _saddles(self._two_sided_matrices(*map(np.atleast_1d, (p1, p2, xi1, xi2))))[0]
        points = np.atleast_2d(np.asarray(points, dtype=float))
        xis = np.atleast_2d(np.asarray(xis, dtype=float))
        if self.kind == 'exogenous':
            drift = self._drift(points)
            u = self._u_at(points)
            return -(drift * xis).sum(axis=1) - self.r * u
        return _saddles(self.payoff_matrices(points, xis))[0]

    def _u_at(self, points):
        if isinstance(self.source, AbstractU):
            grid = BeliefGrid(self.source.n_states, self.source.grid_resolution)
            return self.u_field(grid).evaluate(points)
        payoff = self.source.payoff
        return game_values(np.einsum('ns,sab->nab', points, payoff))

    def evaluate(self, p, xi):
        """H(p, xi) at one point."""
        if self.kind == 'two_sided':
            return float(self.evaluate_batch(p, xi)[0])
        p = as_belief(p, self.n_states)
        return float(self.evaluate_batch(p[None, :], np.asarray(xi, dtype=float)[None, :])[0])

    def evaluate_maxmin(self, p, xi):
        """max_y min_x of the same bilinear form (equals evaluate by the minmax theorem)."""
        if self.kind == 'two_sided':
            (p1, p2), (xi1, xi2) = p, xi
            M = self._two_sided_matrices(*map(np.atleast_1d, (p1, p2, xi1, xi2)))[0]
        elif self.kind == 'endogenous':
            p = as_belief(p, self.n_states)
            M = self.payoff_matrices(p[None, :], np.asarray(xi, dtype=float)[None, :])[0]
        else:
            return self.evaluate(p, xi)
        return float(solve(M.T).value)

    def lipschitz_constant(self, p):
        """max over action pairs of |R(a,b)^T p|, the Lipschitz constant of H in xi."""
        if self.kind == 'two_sided':
            p1, p2 = p
            P1, P2 = np.array([p1, 1 - p1]), np.array([p2, 1 - p2])
            d1 = np.abs(np.einsum('s,sta->ta', P1, self.source.rate1))
            d2 = np.abs(np.einsum('s,stb->tb', P2, self.source.rate2))
            return float(np.sqrt((d1 ** 2).sum(axis=0).max() + (d2 ** 2).sum(axis=0).max()))
        p = as_belief(p, self.n_states)
        if self.kind == 'exogenous':
            return float(np.linalg.norm(self._drift(p[None, :])[0]))
        tensor = self.source.rate.tensor
        return float(np.sqrt((np.einsum('s,stab->tab', p, tensor) ** 2).sum(axis=0)).max())

    def saddle_drift(self, points, xis):
        """
        Drift and stage payoff at the saddle of the bilinear form, per point.

        Returns:
            tuple: (drift (N, S), payoff (N,)) with payoff u(p) for the exogenous kind
        """
        if self.kind == 'exogenous':
            return self._drift(points), self._u_at(points)
        _, x, y = _saddles(self.payoff_matrices(points, xis))
        spec = self.source
        drift = np.einsum('ns,stab,na,nb->nt', points, spec.rate.tensor, x, y)
        payoff = np.einsum('ns,sab,na,nb->n', points, spec.payoff, x, y)
        return drift, payoff


def hamiltonian_eval(H, p, xi):
    """H(p, xi); for a two-sided Hamiltonian p = (p1, p2) and xi = (xi1, xi2)."""
    return H.evaluate(p, xi)


# ---------------------------------------------------------------------------
# Discrete operators on belief grids
# ---------------------------------------------------------------------------

def grid_gradient(grid, values):
    """
    Central differences along e_k - e_{S-1}, one-sided where a neighbour is missing.

    Returns:
        np.ndarray: (N, S) with a zero last column
    """
    S, h = grid.n_states, grid.h
    values = np.asarray(values, dtype=float)
    xi = np.zeros((grid.size, S))
    last = S - 1
    for k in range(last):
        fwd_ok, fwd = grid.shift(last, k)
        bwd_ok, bwd = grid.shift(k, last)
        v_f = np.where(fwd_ok, values[np.maximum(fwd, 0)], values)
        v_b = np.where(bwd_ok, values[np.maximum(bwd, 0)], values)
        span = h * (fwd_ok.astype(float) + bwd_ok.astype(float))
        xi[:, k] = np.divide(v_f - v_b, span, out=np.zeros(grid.size), where=span > 0)
    return xi


def transport_coefficients(drift):
    """
    a_st with drift = sum a_st (e_t - e_s), a_st = min(max(-f_s, 0), max(f_t, 0)).

    Exact for up to three states.

    Returns:
        dict: (s, t) -> (N,) nonnegative coefficients
    """
    drift = np.atleast_2d(drift)
    out_flow = np.clip(-drift, 0.0, None)
    in_flow = np.clip(drift, 0.0, None)
    S = drift.shape[1]
    return {(s, t): np.minimum(out_flow[:, s], in_flow[:, t]) for s in range(S) for t in range(S) if s != t}


@dataclass(frozen=True)
class ObstacleConfig:
    """
    Settings of the obstacle solver.

    Attributes:
        resolution (int): Grid resolution m when no grid is passed
        cfl (float): dtau = cfl h / max drift
        tol (float): Stop when the sup-norm change is at most tol
        max_iterations (int): Cap; None derives it from r dtau
        obstacle_threshold (float): Raise by cav above which a point is obstacle_active
        initial (str or array): 'u', 'zero' or grid values
    """
    resolution: int = 200
    cfl: float = 0.4
    tol: float = 1e-8
    max_iterations: int = None
    obstacle_threshold: float = 1e-10
    initial: object = 'u'

    def __post_init__(self):
        if self.resolution < 1:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if not 0 < self.cfl:
            raise ValueError(f"cfl must be positive, got {self.cfl}")
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if isinstance(self.initial, str) and self.initial not in ('u', 'zero'):
            raise ValueError(f"initial must be 'u', 'zero' or an array, got '{self.initial}'")


@dataclass(frozen=True, eq=False)
class ObstacleField:
    """Converged v with the active branch of the obstacle equation at every grid point."""
    field: ValueField
    tags: np.ndarray
    iterations: int = 0
    residual: float = 0.0
    dtau: float = float('nan')

    @property
    def grid(self):
        return self.field.grid

    @property
    def values(self):
        return self.field.values

    def evaluate(self, points):
        return self.field.evaluate(points)

    def non_revealing_set(self):
        """Grid beliefs where the equation r v + H = 0 holds (pde_active)."""
        return np.asarray(self.grid.points)[self.tags == PDE_ACTIVE]

    def to_frame(self, labels=None):
        frame = self.field.to_frame(labels)
        frame['tag'] = self.tags
        return frame


def _initial_values(config, u_values):
    if isinstance(config.initial, str):
        return np.array(u_values) if config.initial == 'u' else np.zeros_like(u_values)
    initial = np.asarray(config.initial, dtype=float)
    if initial.shape != u_values.shape:
        raise ValueError(f"Initial values have shape {initial.shape}, expected {u_values.shape}")
    return initial.copy()


class _UpwindSystem:
    """Sparse implicit step matrices on a BeliefGrid."""

    def __init__(self, grid):
        self.grid = grid
        S = grid.n_states
        self.shifts = {(s, t): grid.shift(s, t) for s in range(S) for t in range(S) if s != t}

    def operator(self, drift):
        """(L, total rate per point) with L w = sum c_st (w - w_shift), c = a_st / h."""
        n, h = self.grid.size, self.grid.h
        rows, cols, data = [], [], []
        total = np.zeros(n)
        for key, a in transport_coefficients(drift).items():
            valid, target = self.shifts[key]
            use = valid & (a > 0)
            c = a[use] / h
            idx = np.flatnonzero(use)
            rows.append(idx)
            cols.append(target[use])
            data.append(-c)
            total[idx] += c
        rows.append(np.arange(n))
        cols.append(np.arange(n))
        data.append(total)
        L = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        return L, total


def solve_obstacle(H, grid=None, config=None):
    """
    Limit value of a one-sided game on a simplex grid.

    Args:
        H (Hamiltonian): Exogenous or endogenous kind
        grid (BeliefGrid): Grid with two or three states; defaults to config.resolution
        config (ObstacleConfig): Scheme settings

    Returns:
        ObstacleField

    Raises:
        UnsupportedDimensionError: Unless the game has two or three states
        ConvergenceError: If the change is still above tol after the cap
    """
    config = config or ObstacleConfig()
    if H.kind == 'two_sided':
        raise ValueError("Use solve_double_obstacle for two-sided games")
    if H.n_states not in (2, 3):
        raise UnsupportedDimensionError(f"The obstacle solver handles 2 or 3 states, got {H.n_states}")
    grid = grid or BeliefGrid(H.n_states, config.resolution)
    if grid.n_states != H.n_states:
        raise ValueError(f"Grid has {grid.n_states} states, the game has {H.n_states}")

    r, h = H.r, grid.h
    points = np.asarray(grid.points)
    u = H.u_field(grid).values
    v = _initial_values(config, u)
    system = _UpwindSystem(grid)

    drift, payoff = H.saddle_drift(points, grid_gradient(grid, v))
    L, total = system.operator(drift)
    dtau = config.cfl * h / max(float(total.max()) * h, r * h)
    identity = sp.identity(grid.size, format='csr')
    step = factorized(((1.0 / dtau + r) * identity + L).tocsc())
    cap = config.max_iterations or int(60.0 / (r * dtau)) + 1000
    logger.info(f"Obstacle solver: {grid.size} points, kind {H.kind}, dtau={dtau:.3e}, cap {cap}")

    change = np.inf
    w = v
    for iteration in range(1, cap + 1):
        if H.kind == 'endogenous':
            drift, payoff = H.saddle_drift(points, grid_gradient(grid, v))
            L, _ = system.operator(drift)
            w = spsolve(((1.0 / dtau + r) * identity + L).tocsc(), v / dtau + r * payoff)
        else:
            w = step(v / dtau + r * payoff)
        new = cav(ValueField(grid, w)).values
        change = float(np.abs(new - v).max())
        v = new
        if iteration % 1000 == 0:
            logger.debug(f"Iteration {iteration}: change {change:.3e}")
        if change <= config.tol:
            break
    else:
        raise ConvergenceError(
            f"Obstacle iteration did not reach tol {config.tol:.1e} in {cap} iterations (change {change:.3e})",
            iterations=cap, residual=change, diagnostics={'dtau': dtau, 'resolution': grid.resolution})

    tags = np.where(v - w > config.obstacle_threshold, OBSTACLE_ACTIVE, PDE_ACTIVE)
    logger.info(f"Obstacle solver converged in {iteration} iterations; "
                f"{int((tags == OBSTACLE_ACTIVE).sum())} obstacle-active points")
    return ObstacleField(ValueField(grid, v), tags, iteration, change, dtau)


class ResidualReport(NamedTuple):
    ok: bool
    worst_pde: float
    worst_pde_point: np.ndarray
    worst_obstacle: float
    worst_obstacle_point: np.ndarray
    min_residual: float
    residuals: np.ndarray


def residual_check(field, H, tol=5e-3):
    """
    r v + H(p, Dv) with central differences at every grid point.

    pde_active points need |residual| <= tol; obstacle_active points need
    residual >= -tol. A bare ValueField is treated as pde_active everywhere.
    """
    if isinstance(field, ValueField):
        field = ObstacleField(field, np.full(field.grid.size, PDE_ACTIVE))
    grid = field.grid
    points = np.asarray(grid.points)
    residuals = H.r * field.values + H.evaluate_batch(points, grid_gradient(grid, field.values))

    pde = field.tags == PDE_ACTIVE
    worst_pde, pde_point = 0.0, None
    if pde.any():
        k = np.flatnonzero(pde)[int(np.argmax(np.abs(residuals[pde])))]
        worst_pde, pde_point = float(abs(residuals[k])), points[k]
    worst_obstacle, obstacle_point = 0.0, None
    if (~pde).any():
        k = np.flatnonzero(~pde)[int(np.argmin(residuals[~pde]))]
        worst_obstacle, obstacle_point = float(-residuals[k]), points[k]

    ok = worst_pde <= tol and worst_obstacle <= tol
    if not ok:
        logger.warning(f"Residual check failed: pde {worst_pde:.3e} at {pde_point}, "
                       f"obstacle {worst_obstacle:.3e} at {obstacle_point}")
    return ResidualReport(ok, worst_pde, pde_point, worst_obstacle, obstacle_point,
                          float(residuals.min()), residuals)


# ---------------------------------------------------------------------------
# Two-sided games
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DoubleObstacleConfig:
    """Settings of the double obstacle solver (see ObstacleConfig)."""
    resolution1: int = 100
    resolution2: int = 100
    cfl: float = 0.4
    tol: float = 1e-7
    max_iterations: int = None
    obstacle_threshold: float = 1e-10
    oscillation_rounds: int = OSCILLATION_ROUNDS

    def __post_init__(self):
        if self.resolution1 < 1 or self.resolution2 < 1:
            raise ValueError(f"Resolutions must be positive, got {self.resolution1}x{self.resolution2}")
        if self.cfl <= 0 or self.tol <= 0:
            raise ValueError("cfl and tol must be positive")


@dataclass(frozen=True, eq=False)
class DoubleObstacleField:
    """v(p1, p2) on a ProductGrid; values[i, j] sits at (i/m1, j/m2)."""
    grid: ProductGrid
    values: np.ndarray
    tags: np.ndarray
    iterations: int
    residual: float
    concavity_violation: float
    convexity_violation: float

    def evaluate(self, p1, p2):
        return self.grid.evaluate(self.values, p1, p2)

    def to_frame(self):
        frame = self.grid.to_frame(self.values)
        frame['tag'] = self.tags.ravel()
        return frame


def _axis_operator(grid, drift1, drift2):
    """Upwind transport along both axes of a ProductGrid: L w = sum c (w - w_neighbour)."""
    m1, m2 = grid.resolution1, grid.resolution2
    shape = grid.shape
    n = shape[0] * shape[1]
    index = np.arange(n).reshape(shape)
    rows, cols, data = [], [], []
    total = np.zeros(shape)
    for drift, h, axis, size in ((drift1, grid.h1, 0, m1), (drift2, grid.h2, 1, m2)):
        coords = np.indices(shape)[axis]
        for direction in (1, -1):
            speed = np.clip(direction * drift, 0.0, None) / h
            valid = (coords + direction >= 0) & (coords + direction <= size) & (speed > 0)
            neighbour = np.roll(index, -direction, axis=axis)
            rows.append(index[valid])
            cols.append(neighbour[valid])
            data.append(-speed[valid])
            total[valid] += speed[valid]
    rows.append(index.ravel())
    cols.append(index.ravel())
    data.append(total.ravel())
    L = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return L, float(total.max())


def _product_gradient(grid, V):
    return np.gradient(V, grid.h1, axis=0), np.gradient(V, grid.h2, axis=1)


def solve_double_obstacle(H, grid=None, config=None):
    """
    Value of a two-sided game with two states per side.

    Each round takes one implicit upwind step of r w + H = 0 at the current
    saddle, concavifies along p1 and convexifies along p2.

    Raises:
        UnsupportedDimensionError: Unless both sides have two states
        OscillationError: If the projections cycle without progress for
            oscillation_rounds rounds
        ConvergenceError: If the change is still above tol after the cap
    """
    config = config or DoubleObstacleConfig()
    spec = H.source
    if H.kind != 'two_sided':
        raise ValueError("solve_double_obstacle needs a two-sided Hamiltonian")
    if spec.n_states1 != 2 or spec.n_states2 != 2:
        raise UnsupportedDimensionError(
            f"The double obstacle solver handles 2x2 states, got {spec.n_states1}x{spec.n_states2}")
    grid = grid or ProductGrid(config.resolution1, config.resolution2)
    r = H.r
    P1, P2 = grid.mesh
    p1, p2 = P1.ravel(), P2.ravel()
    n = p1.size

    def saddle(V):
        xi1, xi2 = _product_gradient(grid, V)
        M = H._two_sided_matrices(p1, p2, xi1.ravel(), xi2.ravel())
        value, x, y = _saddles(M)
        stage = np.einsum('nab,na,nb->n', H._two_sided_matrices(p1, p2, 0 * p1, 0 * p2), x, y) / -r
        drift1 = np.einsum('ns,sa,na->n', np.column_stack([p1, 1 - p1]), spec.rate1[:, 0, :], x)
        drift2 = np.einsum('ns,sb,nb->n', np.column_stack([p2, 1 - p2]), spec.rate2[:, 0, :], y)
        return drift1.reshape(grid.shape), drift2.reshape(grid.shape), stage

    u = _saddles(H._two_sided_matrices(p1, p2, 0 * p1, 0 * p2))[0].reshape(grid.shape) / -r
    V = u.copy()
    decoupled = (np.ptp(spec.rate1, axis=2).max() == 0) and (np.ptp(spec.rate2, axis=2).max() == 0)

    drift1, drift2, stage = saddle(V)
    if decoupled:
        stage = u.ravel()
    L, max_rate = _axis_operator(grid, drift1, drift2)
    h = min(grid.h1, grid.h2)
    dtau = config.cfl * h / max(max_rate * h, r * h)
    identity = sp.identity(n, format='csr')
    step = factorized(((1.0 / dtau + r) * identity + L).tocsc()) if decoupled else None
    cap = config.max_iterations or int(60.0 / (r * dtau)) + 1000
    logger.info(f"Double obstacle solver: {grid.shape} grid, dtau={dtau:.3e}, decoupled={decoupled}")

    best, stale = np.inf, 0
    change = np.inf
    for iteration in range(1, cap + 1):
        if decoupled:
            W = step(V.ravel() / dtau + r * stage).reshape(grid.shape)
        else:
            drift1, drift2, stage = saddle(V)
            L, _ = _axis_operator(grid, drift1, drift2)
            W = spsolve(((1.0 / dtau + r) * identity + L).tocsc(), V.ravel() / dtau + r * stage).reshape(grid.shape)
        V1 = grid.cav_p1(W)
        V2 = grid.vex_p2(V1)
        change = float(np.abs(V2 - V).max())
        cav_amplitude = float((V1 - W).max())
        vex_amplitude = float((V1 - V2).max())
        V = V2
        if change <= config.tol:
            break
        if change < best:
            best, stale = change, 0
        else:
            stale += 1
        if stale >= config.oscillation_rounds and min(cav_amplitude, vex_amplitude) > config.tol:
            raise OscillationError(
                f"cav/vex projections cycled for {stale} rounds (change {change:.3e})",
                iterations=iteration, residual=change,
                diagnostics={'cav_amplitude': cav_amplitude, 'vex_amplitude': vex_amplitude, 'best_change': best})
    else:
        raise ConvergenceError(
            f"Double obstacle iteration did not reach tol {config.tol:.1e} in {cap} iterations (change {change:.3e})",
            iterations=cap, residual=change, diagnostics={'dtau': dtau})

    raised = np.abs(V - W) > config.obstacle_threshold
    tags = np.where(raised, OBSTACLE_ACTIVE, PDE_ACTIVE)
    concavity = grid.concavity_violation_p1(V)
    convexity = grid.convexity_violation_p2(V)
    if concavity > 1e-6 or convexity > 1e-6:
        logger.warning(f"Two-sided value off its shape constraints: p1 concavity {concavity:.3e}, "
                       f"p2 convexity {convexity:.3e}")
    logger.info(f"Double obstacle solver converged in {iteration} iterations")
    return DoubleObstacleField(grid, V, tags, iteration, change, concavity, convexity)


def two_sided_u(H, grid):
    """u(p1, p2), the value of the average game, on a ProductGrid."""
    P1, P2 = grid.mesh
    p1, p2 = P1.ravel(), P2.ravel()
    return (_saddles(H._two_sided_matrices(p1, p2, 0 * p1, 0 * p2))[0] / -H.r).reshape(grid.shape)


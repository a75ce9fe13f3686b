"""
Discounted Integrals Along the Belief Flow

The functional  int_0^inf r e^{-rt} f(p*_t) dt  for f in {u, cav u, vertex
weights}, which gives the value bounds of an exogenous-chain game:

    sum_s u(delta_s) int r e^{-rt} p*_t(s) dt  <=  v(p)
    int r e^{-rt} u(p*_t) dt                   <=  v(p)
    v(p)  <=  int r e^{-rt} cav u(p*_t) dt

Quadrature:
1. Substitute tau = 1 - e^{-rt}, so the integral becomes int_0^1 f(p*_{t(tau)}) dtau
   with t(tau) = -log(1 - tau) / r and no truncation of the horizon
2. 64-point Gauss-Legendre per panel; a panel is split in two until the two
   halves agree with the whole to tol times the panel width
3. u, cav u and the vertex weights share nodes, so the sandwich
   max(lower bounds) <= upper bound holds node by node
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from src.chain import belief_flow_batch, invariant_measure
from src.envelope import BeliefGrid, cav
from src.game_model import AbstractU, GameSpec, UnsupportedDimensionError, as_belief, stage_weight
from src.matrix_game import average_game_field, u_evaluator
from src.utils import parallel_map

logger = logging.getLogger(__name__)

QUADRATURE_TOL = 1e-8
SANDWICH_TOL = 1e-8
MAX_DEPTH = 30
NODES, WEIGHTS = np.polynomial.legendre.leggauss(64)
DEFAULT_RESOLUTION = {1: 1, 2: 200, 3: 30}
RECIPES = ('u_flow', 'cav_flow', 'vertex_flow')


def tau_from_time(t, r):
    """tau = 1 - e^{-rt}; t = inf maps to 1."""
    return -np.expm1(-r * np.asarray(t, dtype=float))


def time_from_tau(tau, r):
    return -np.log1p(-np.asarray(tau, dtype=float)) / r


def tau_quadrature(integrand, r, tol=QUADRATURE_TOL, interval=(0.0, 1.0), max_depth=MAX_DEPTH):
    """
    Adaptive Gauss-Legendre integral of f(t(tau)) dtau over a tau interval.

    Args:
        integrand (callable): Maps an array of times (N,) to (N,) or (N, K)
        r (float): Discount rate, r > 0
        tol (float): Absolute tolerance for the whole interval
        interval (tuple): Sub-interval of [0, 1] in tau
        max_depth (int): Bisection depth at which a panel is accepted as is

    Returns:
        float or np.ndarray: The integral (shape (K,) for vector integrands)
    """
    if r <= 0:
        raise ValueError(f"Discount rate must be positive, got {r}")
    lo, hi = float(interval[0]), float(interval[1])
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError(f"tau interval must lie in [0, 1], got ({lo}, {hi})")
    if hi == lo:
        return 0.0 * np.asarray(integrand(np.zeros(1)), dtype=float)[0]

    def panel(a, b):
        half = 0.5 * (b - a)
        taus = half * NODES + 0.5 * (a + b)
        values = np.asarray(integrand(time_from_tau(taus, r)), dtype=float)
        return half * np.tensordot(WEIGHTS, values, axes=(0, 0))

    total = 0.0
    capped = 0
    stack = [(lo, hi, panel(lo, hi), 0)]
    while stack:
        a, b, whole, depth = stack.pop()
        mid = 0.5 * (a + b)
        left, right = panel(a, mid), panel(mid, b)
        if np.max(np.abs(left + right - whole)) <= tol * (b - a) or depth >= max_depth:
            if depth >= max_depth:
                capped += 1
            total = total + left + right
        else:
            stack.append((a, mid, left, depth + 1))
            stack.append((mid, b, right, depth + 1))
    if capped:
        logger.warning(f"{capped} quadrature panels reached the depth cap of {max_depth}")
    return total


def closed_form_example(p, r, pi):
    """
    Limit value 1/4 - (2p-1)^2/4 * r/(r + 4 pi) of the two-state switching example.

    Raises:
        ValueError: If p is outside [0, 1] or r, pi are not positive
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if r <= 0:
        raise ValueError(f"r must be positive, got {r}")
    if pi <= 0:
        raise ValueError(f"pi must be positive, got {pi}")
    return 0.25 - (2.0 * p - 1.0) ** 2 / 4.0 * r / (r + 4.0 * pi)


def step2_error_bound(n_states, r, n, c):
    """
    |S| (lambda_n + 2c/n)^{1/2}: distance between the game played every 1/n
    and its version where beliefs only move at stage boundaries.

    Args:
        n_states (int): |S|
        r (float): Discount rate
        n (int): Stage frequency
        c (float): Constant with |P_h^T p - p|_1 <= c h, e.g. 2 max_s |R_ss|
    """
    if c < 0:
        raise ValueError(f"c must be nonnegative, got {c}")
    if r <= 0:
        raise ValueError(f"r must be positive, got {r}")
    return float(n_states * np.sqrt(stage_weight(r, n) + 2.0 * c / n))


def _dynamics(source):
    if isinstance(source, AbstractU):
        source.require_dynamics()
        return source.rate.matrix, source.discount
    if isinstance(source, GameSpec):
        if not source.is_exogenous:
            raise ValueError("Bounds along the belief flow need an exogenous generator")
        return source.rate.matrix, source.discount
    raise TypeError(f"Cannot compute bounds for {type(source).__name__}")


class BoundsCalculator:
    """
    u and cav u of a source integrated along p*_t.

    cav u comes from a grid table. For a GameSpec, u is solved exactly at every
    quadrature node and the cav integrand is max(cav table, exact u), so the
    upper bound dominates the non-revealing bound node by node. An AbstractU is
    only known on its grid and both integrands interpolate its table.

    Args:
        source (GameSpec or AbstractU): Exogenous game, or abstract u with dynamics
        resolution (int): Grid resolution; defaults to the AbstractU's own, else
            200 for two states and 30 for three
        tol (float): Quadrature tolerance
    """

    def __init__(self, source, resolution=None, tol=QUADRATURE_TOL):
        self.source = source
        self.R, self.r = _dynamics(source)
        self.n_states = source.n_states
        if self.n_states > 3:
            raise UnsupportedDimensionError(f"Grid based bounds support at most 3 states, got {self.n_states}")
        if resolution is None:
            resolution = source.grid_resolution if isinstance(source, AbstractU) else DEFAULT_RESOLUTION[self.n_states]
        self.grid = BeliefGrid(self.n_states, resolution)
        self.tol = tol
        logger.debug(f"Sampling u on {self.grid.size} points (m={resolution})")
        self.u_field = average_game_field(source, self.grid)
        self.cav_field = cav(self.u_field)
        self.u_exact = u_evaluator(source) if isinstance(source, GameSpec) else None
        u = self.u_exact or self.u_field.evaluate
        self.vertex_values = np.asarray(u(np.eye(self.n_states)), dtype=float)

    def _columns(self, p, recipes):
        def integrand(t):
            flow = belief_flow_batch(self.R, p, t)
            exact = None
            if self.u_exact is not None and ('u_flow' in recipes or 'cav_flow' in recipes):
                exact = self.u_exact(flow)
            out = []
            for recipe in recipes:
                if recipe == 'u_flow':
                    out.append(self.u_field.evaluate(flow) if exact is None else exact)
                elif recipe == 'cav_flow':
                    hull = self.cav_field.evaluate(flow)
                    out.append(hull if exact is None else np.maximum(hull, exact))
                else:
                    out.append(flow @ self.vertex_values)
            return np.column_stack(out)
        return integrand

    def integrals(self, p, recipes=RECIPES, t_start=0.0, t_end=np.inf):
        """
        Discounted integrals over [t_start, t_end] of each recipe, on shared nodes.

        Returns:
            np.ndarray: One value per recipe
        """
        unknown = [name for name in recipes if name not in RECIPES]
        if unknown:
            raise ValueError(f"Unknown integrand recipe {unknown}, expected one of {list(RECIPES)}")
        if t_start < 0 or t_end < t_start:
            raise ValueError(f"Need 0 <= t_start <= t_end, got [{t_start}, {t_end}]")
        p = as_belief(p, self.n_states)
        interval = (float(tau_from_time(t_start, self.r)), float(tau_from_time(t_end, self.r)))
        return np.atleast_1d(tau_quadrature(self._columns(p, list(recipes)), self.r, self.tol, interval))

    def upper(self, p):
        return float(self.integrals(p, ('cav_flow',))[0])

    def lower_nonrevealing(self, p):
        return float(self.integrals(p, ('u_flow',))[0])

    def lower_fully_revealing(self, p):
        return float(self.integrals(p, ('vertex_flow',))[0])

    def invariant_belief(self):
        return invariant_measure(self.R)


def upper_bound(source, p, resolution=None, tol=QUADRATURE_TOL):
    """
    int r e^{-rt} cav u(p*_t) dt, an upper bound on the limit value.

    Raises:
        UnsupportedDimensionError: For more than three states
        DimensionMismatchError: If p does not match the states
    """
    return BoundsCalculator(source, resolution, tol).upper(p)


def lower_bound_nonrevealing(source, p, resolution=None, tol=QUADRATURE_TOL):
    """int r e^{-rt} u(p*_t) dt, what player 1 guarantees by never using information."""
    return BoundsCalculator(source, resolution, tol).lower_nonrevealing(p)


def lower_bound_fully_revealing(source, p, resolution=None, tol=QUADRATURE_TOL):
    """sum_s u(delta_s) int r e^{-rt} p*_t(s) dt, what player 1 guarantees by revealing everything."""
    return BoundsCalculator(source, resolution, tol).lower_fully_revealing(p)


def flow_integral(source, p, t_start=0.0, t_end=np.inf, recipe='u_flow', resolution=None, tol=QUADRATURE_TOL):
    """Discounted integral of one recipe along p*_t restricted to [t_start, t_end]."""
    calculator = BoundsCalculator(source, resolution, tol)
    return float(calculator.integrals(p, (recipe,), t_start, t_end)[0])


@dataclass(frozen=True)
class DiscountedIntegral:
    """
    A single discounted functional along the deterministic flow.

    Attributes:
        recipe (str): 'u_flow', 'cav_flow' or 'vertex_flow'
        p (tuple): Starting belief
        t_start (float): Start of the time window
        t_end (float): End of the time window (inf for the full horizon)
        tol (float): Quadrature tolerance
    """
    recipe: str
    p: tuple
    t_start: float = 0.0
    t_end: float = np.inf
    tol: float = QUADRATURE_TOL

    def __post_init__(self):
        if self.recipe not in RECIPES:
            raise ValueError(f"Unknown integrand recipe '{self.recipe}', expected one of {list(RECIPES)}")
        object.__setattr__(self, 'p', tuple(np.atleast_1d(np.asarray(self.p, dtype=float)).tolist()))

    def evaluate(self, calculator):
        """
        Integrate with a BoundsCalculator's tables.

        Raises:
            ArithmeticError: If the result is not finite
        """
        p = self.p[0] if len(self.p) == 1 else self.p
        result = float(calculator.integrals(p, (self.recipe,), self.t_start, self.t_end)[0])
        if not np.isfinite(result):
            raise ArithmeticError(f"Discounted integral of {self.recipe} is not finite")
        bound = float(max(np.abs(calculator.cav_field.values).max(), np.abs(calculator.u_field.values).max()))
        if abs(result) > bound + self.tol:
            logger.warning(f"Discounted integral {result:.6g} exceeds the integrand bound {bound:.6g}")
        return result


def _report_points(grid, n_states):
    if isinstance(grid, BeliefGrid):
        return np.asarray(grid.points)
    pts = np.asarray(grid, dtype=float)
    if pts.ndim == 1:
        pts = np.column_stack([pts, 1.0 - pts]) if n_states == 2 else pts[None, :]
    return pts


def sandwich_report(source, grid, resolution=None, tol=QUADRATURE_TOL):
    """
    Both lower bounds and the upper bound at every point of a grid.

    Args:
        source (GameSpec or AbstractU): Exogenous game or abstract u with dynamics
        grid (BeliefGrid or array-like): Evaluation beliefs; a 1-D array is read
            as probabilities of the first of two states
        resolution (int): Resolution of the tables the integrands interpolate

    Returns:
        pd.DataFrame: p_<label> columns, lower_nonrevealing, lower_fully_revealing,
            upper, lower (the larger lower bound), gap and sandwich_ok
    """
    calculator = BoundsCalculator(source, resolution, tol)
    points = _report_points(grid, calculator.n_states)
    logger.info(f"Computing value bounds at {len(points)} beliefs")

    rows = parallel_map(lambda q: calculator.integrals(q, ('u_flow', 'vertex_flow', 'cav_flow')), points)
    rows = np.array(rows).reshape(len(points), 3)

    labels = source.states
    frame = pd.DataFrame(points, columns=[f"p_{label}" for label in labels])
    frame['lower_nonrevealing'] = rows[:, 0]
    frame['lower_fully_revealing'] = rows[:, 1]
    frame['upper'] = rows[:, 2]
    frame['lower'] = rows[:, :2].max(axis=1)
    frame['gap'] = frame['upper'] - frame['lower']
    frame['sandwich_ok'] = frame['gap'] >= -SANDWICH_TOL

    failures = int((~frame['sandwich_ok']).sum())
    if failures:
        logger.warning(f"Bounds sandwich violated at {failures} beliefs, worst gap {frame['gap'].min():.3e}")
    return frame


def split_interval(cav_field, u_field=None, p_inf=None, tol=1e-9):
    """
    Endpoints p_lo <= p_inf <= p_hi of the affine piece of cav u containing p_inf.

    Two states only; beliefs are probabilities of the first state. Endpoints are
    grid points where cav u bends (so cav u = u there).

    Args:
        cav_field (ValueField): cav u on a two-state grid
        u_field (ValueField): u on the same grid, used to confirm contact at the endpoints
        p_inf (float): Invariant probability of the first state
        tol (float): Second differences below tol * max|cav u| count as affine

    Returns:
        tuple: (p_lo, p_hi)
    """
    grid = cav_field.grid
    if grid.n_states != 2:
        raise UnsupportedDimensionError(f"split_interval handles two states, got {grid.n_states}")
    if p_inf is None or not 0.0 <= p_inf <= 1.0:
        raise ValueError(f"p_inf must lie in [0, 1], got {p_inf}")
    m = grid.resolution
    c = cav_field.values
    scale = max(1.0, float(np.abs(c).max()))
    d2 = np.zeros(m + 1)
    d2[1:-1] = np.abs(c[:-2] - 2.0 * c[1:-1] + c[2:])
    flat = d2 <= tol * scale

    x = p_inf * m
    lo = int(np.floor(x + 1e-9))
    hi = lo if abs(x - round(x)) <= 1e-9 else lo + 1
    lo, hi = min(lo, m), min(hi, m)
    while 0 < lo < m and flat[lo]:
        lo -= 1
    while 0 < hi < m and flat[hi]:
        hi += 1

    if u_field is not None:
        gaps = c[[lo, hi]] - u_field.values[[lo, hi]]
        if np.any(gaps > tol * scale):
            logger.warning(f"cav u does not touch u at the split endpoints, gaps {gaps.tolist()}")
    return lo / m, hi / m

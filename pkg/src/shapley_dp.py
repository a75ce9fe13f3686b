"""
Splitting Dynamic Programming for the Game Played Every 1/n

The discounted value v_n of the game where stages last 1/n is the fixed point of

    T f(p) = max_x min_b  lambda_n g(p, x(p), b)
                          + (1 - lambda_n) sum_a x(p)(a) f(P_{1/n}(a,b)^T phat(x, a))

with lambda_n = 1 - e^{-r/n}, x in Delta(A)^S a state-dependent strategy of the
informed player, x(p)(a) = sum_s p_s x_s(a) and phat(x, a) the posterior after a.

Scheme:
1. The max over x runs over the product grid of distributions with
   denominator k for every state, followed by one coordinate-ascent pass
   that moves mass 1/(2k) between two actions of one state; the strategy
   bias is one-sided (below v_n)
2. The min over y is taken over pure b, the objective being affine in y
3. Posteriors, flowed posteriors and their interpolation stencils do not depend
   on f and are computed once per run
4. Value iteration starts from f = 0 and stops when the sup-norm change is below tol
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
import pandas as pd

from src.analysis import step2_error_bound
from src.chain import transition
from src.envelope import BeliefGrid, ValueField, is_concave
from src.game_model import GameSpec, UnsupportedDimensionError, as_belief, stage_weight
from src.utils import ConvergenceError, parallel_map

logger = logging.getLogger(__name__)

MAX_ACTIONS = 4
MAX_PROFILES = 200_000
CHUNK_ELEMENTS = 2_000_000
BARYCENTER_TOL = 1e-12
REFINE_GAIN = 1e-12
CONCAVITY_TOL = 1e-6
MONOTONE_SLACK = 1e-3


@dataclass(frozen=True)
class DPConfig:
    """
    Settings of one value iteration.

    Attributes:
        n (int): Stage frequency; stages last 1/n
        resolution (int): Belief grid resolution m
        x_resolution (int): Denominator k of the strategy grid per state
        tol (float): Stop when the sup-norm change is at most tol
        max_iterations (int): Cap; None derives it from the contraction factor
        refine (bool): Run the coordinate-ascent pass after the grid search
            in every application of T; without it T is exactly monotone and a
            (1 - lambda_n)-contraction on the grid
    """
    n: int = 32
    resolution: int = 200
    x_resolution: int = 40
    tol: float = 1e-6
    max_iterations: int = None
    refine: bool = True

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be at least 1, got {self.n}")
        if self.resolution < 1:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if self.x_resolution < 1:
            raise ValueError(f"x_resolution must be positive, got {self.x_resolution}")
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError(f"max_iterations must be positive, got {self.max_iterations}")

    def stage_weight(self, r):
        return stage_weight(r, self.n)

    def iteration_cap(self, r, max_abs_payoff):
        """Twice the contraction bound log(tol lambda_n / max|g|) / log(1 - lambda_n), plus slack."""
        if self.max_iterations is not None:
            return self.max_iterations
        lam = self.stage_weight(r)
        if max_abs_payoff <= 0 or lam >= 1.0:
            return 10
        bound = math.log(self.tol * lam / max_abs_payoff) / math.log1p(-lam)
        return int(2 * max(bound, 1.0)) + 10


class SplitOutcome(NamedTuple):
    """Action marginal x(p), posteriors phat(x, a) (rows) and which actions are used."""
    marginal: np.ndarray
    posteriors: np.ndarray
    used: np.ndarray


def split(p, x):
    """
    Bayesian split of belief p by the state-dependent strategy x.

    Args:
        p (array-like): Belief over S
        x (array-like): x[s][a], a distribution over A for every state

    Returns:
        SplitOutcome: Unused actions (zero marginal) keep p as their posterior
    """
    x = np.asarray(x, dtype=float)
    p = as_belief(p, x.shape[0])
    if np.any(x < 0) or np.any(np.abs(x.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("Every x_s must be a distribution over the actions")
    joint = p[:, None] * x
    marginal = joint.sum(axis=0)
    used = marginal > 0
    posteriors = np.tile(p, (x.shape[1], 1))
    posteriors[used] = (joint[:, used] / marginal[used]).T
    return SplitOutcome(marginal, posteriors, used)


def _simplex_grid(n_parts, denominator):
    """All distributions over n_parts with entries in (1/denominator) N."""
    return BeliefGrid(n_parts, denominator).points if n_parts > 1 else np.ones((1, 1))


def strategy_profiles(n_states, n_actions, x_resolution):
    """Product grid of Delta(A)^S, shape (J, S, A)."""
    per_state = _simplex_grid(n_actions, x_resolution)
    count = len(per_state) ** n_states
    if count > MAX_PROFILES:
        raise ValueError(f"Strategy grid has {count} profiles (limit {MAX_PROFILES}); lower x_resolution")
    index = np.array(np.meshgrid(*[np.arange(len(per_state))] * n_states, indexing='ij')).reshape(n_states, -1).T
    return per_state[index]


def _clamp(points):
    """Clip round-off negatives and renormalize; returns (points, number of clamped points)."""
    bad = (points.min(axis=-1) < 0) | (np.abs(points.sum(axis=-1) - 1.0) > BARYCENTER_TOL)
    if not np.any(bad):
        return points, 0
    points = np.clip(points, 0.0, None)
    return points / points.sum(axis=-1, keepdims=True), int(bad.sum())


class _Chunk(NamedTuple):
    stage: np.ndarray       # (N, J, B) payoff of x(p) against b
    marginal: np.ndarray    # (N, J, A)
    idx: np.ndarray         # (N, J, A, K) or (N, J, A, B, K)
    weights: np.ndarray


class ShapleyOperator:
    """
    The operator T for one spec and config, with everything independent of f precomputed.

    Raises:
        UnsupportedDimensionError: For more than three states
        ValueError: For more than four actions per player
    """

    def __init__(self, spec, config):
        if not isinstance(spec, GameSpec):
            raise TypeError(f"Dynamic programming needs a GameSpec, got {type(spec).__name__}")
        if spec.n_states > 3:
            raise UnsupportedDimensionError(f"Belief grids support at most 3 states, got {spec.n_states}")
        if spec.n_actions1 > MAX_ACTIONS or spec.n_actions2 > MAX_ACTIONS:
            raise ValueError(f"At most {MAX_ACTIONS} actions per player, got {spec.n_actions1}x{spec.n_actions2}")

        self.spec = spec
        self.config = config
        self.grid = BeliefGrid(spec.n_states, config.resolution)
        self.lam = config.stage_weight(spec.discount)
        self.profiles = strategy_profiles(spec.n_states, spec.n_actions1, config.x_resolution)
        self.clamped = 0

        h = 1.0 / config.n
        if spec.is_exogenous:
            self.transitions = transition(spec.rate.matrix, h)
        else:
            A, B = spec.n_actions1, spec.n_actions2
            self.transitions = np.array([[transition(spec.rate.generator(a, b), h) for b in range(B)]
                                         for a in range(A)])

        J, S, A = self.profiles.shape
        B = spec.n_actions2
        per_point = J * A * B * S
        size = max(1, CHUNK_ELEMENTS // per_point)
        bounds = list(range(0, self.grid.size, size)) + [self.grid.size]
        self._slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        logger.info(f"Shapley operator: {self.grid.size} beliefs, {J} strategy profiles, lambda_n={self.lam:.6g}")
        self._chunks = [self._prepare(self.grid.points[s]) for s in self._slices]
        if self.clamped:
            logger.warning(f"Clamped {self.clamped} posteriors back onto the simplex")

    def _posteriors(self, P, profiles):
        """Marginals (N, J, A) and posteriors (N, J, A, S) of beliefs P under profiles (J, S, A) or (N, J, S, A)."""
        if profiles.ndim == 3:
            profiles = profiles[None]
        joint = P[:, None, :, None] * profiles
        marginal = joint.sum(axis=2)
        safe = np.where(marginal > 0, marginal, 1.0)
        posteriors = np.swapaxes(joint, 2, 3) / safe[..., None]
        posteriors = np.where(marginal[..., None] > 0, posteriors, P[:, None, None, :])
        return marginal, posteriors

    def _flowed(self, posteriors):
        if self.spec.is_exogenous:
            return posteriors @ self.transitions
        # (N, J, A, S) -> (N, J, A, B, S)
        return np.einsum('njas,abst->njabt', posteriors, self.transitions)

    def _stencils(self, points):
        points, clamped = _clamp(points)
        self.clamped += clamped
        flat = points.reshape(-1, points.shape[-1])
        idx, w = self.grid.stencil(flat)
        return idx.reshape(points.shape[:-1] + (-1,)), w.reshape(points.shape[:-1] + (-1,))

    def _stage_payoffs(self, P, profiles):
        return np.einsum('ns,jsa,sab->njb', P, profiles, self.spec.payoff)

    def _prepare(self, P):
        marginal, posteriors = self._posteriors(P, self.profiles)
        idx, w = self._stencils(self._flowed(posteriors))
        return _Chunk(self._stage_payoffs(P, self.profiles), marginal, idx, w)

    def _objective(self, chunk, values):
        """Objective per (point, profile, b)."""
        continuation = (values[chunk.idx] * chunk.weights).sum(axis=-1)
        if self.spec.is_exogenous:
            expected = (chunk.marginal * continuation).sum(axis=2)[..., None]
        else:
            expected = np.einsum('nja,njab->njb', chunk.marginal, continuation)
        return self.lam * chunk.stage + (1.0 - self.lam) * expected

    def apply_values(self, values, refine=None):
        """
        T applied to grid values.

        Args:
            values (np.ndarray): Continuation values on the grid
            refine (bool): Override config.refine

        Returns:
            tuple: New values and the maximizing strategy (N, S, A) per point
        """
        values = np.asarray(values, dtype=float)
        refine = self.config.refine if refine is None else refine

        def run(chunk):
            guaranteed = self._objective(chunk, values).min(axis=2)
            best = guaranteed.argmax(axis=1)
            return guaranteed[np.arange(len(best)), best], best

        results = parallel_map(run, self._chunks)
        profiles = self.profiles[np.concatenate([r[1] for r in results])]
        if refine and self.spec.n_actions1 > 1:
            return self.refine(values, profiles)
        return np.concatenate([r[0] for r in results]), profiles

    def __call__(self, field):
        if field.grid != self.grid:
            raise ValueError(f"Field grid {field.grid} does not match the operator grid {self.grid}")
        return field.with_values(self.apply_values(field.values)[0])

    def guarantee(self, values, profiles):
        """
        min over pure b of the objective for one given profile per grid point.

        Args:
            values (np.ndarray): Continuation values on the grid
            profiles (np.ndarray): (N, S, A), one strategy per grid point
        """
        values = np.asarray(values, dtype=float)
        P = self.grid.points
        marginal, posteriors = self._posteriors(P, profiles[:, None])
        idx, w = self._stencils(self._flowed(posteriors))
        stage = np.einsum('ns,nsa,sab->nb', P, profiles, self.spec.payoff)[:, None, :]
        chunk = _Chunk(stage, marginal, idx, w)
        return self._objective(chunk, values)[:, 0, :].min(axis=1)

    def refine(self, values, profiles):
        """One coordinate-ascent pass from the given strategies; returns (guarantees, strategies)."""
        step = 0.5 / self.config.x_resolution
        profiles = np.array(profiles, dtype=float)
        current = self.guarantee(values, profiles)
        S, A = profiles.shape[1:]
        for s in range(S):
            for a in range(A):
                for b in range(A):
                    if a == b:
                        continue
                    moved = profiles.copy()
                    shift = np.minimum(step, moved[:, s, a])
                    moved[:, s, a] -= shift
                    moved[:, s, b] += shift
                    candidate = self.guarantee(values, moved)
                    better = candidate > current + REFINE_GAIN
                    profiles[better] = moved[better]
                    current = np.where(better, candidate, current)
        return current, profiles


def bellman_apply(spec, field, config):
    """
    One application of the splitting operator.

    Args:
        spec (GameSpec): Exogenous or endogenous one-sided game
        field (ValueField): Continuation values on the config's grid
        config (DPConfig): Stage frequency and grids

    Returns:
        ValueField
    """
    return ShapleyOperator(spec, config)(field)


@dataclass(frozen=True, eq=False)
class DPResult:
    """Outcome of value iteration."""
    field: ValueField
    iterations: int
    residual: float
    lambda_n: float
    concavity: object
    clamped: int
    best_profiles: np.ndarray


def value_iteration(spec, config, operator=None):
    """
    Iterate T from the zero field to its fixed point.

    Raises:
        ConvergenceError: If the change is still above tol after the iteration cap
    """
    operator = operator or ShapleyOperator(spec, config)
    cap = config.iteration_cap(spec.discount, spec.max_abs_payoff)
    values = np.zeros(operator.grid.size)
    residual = np.inf
    logger.info(f"Value iteration for n={config.n}, m={config.resolution}, k={config.x_resolution} (cap {cap})")
    for iteration in range(1, cap + 1):
        new, profiles = operator.apply_values(values)
        residual = float(np.abs(new - values).max())
        values = new
        if iteration % 100 == 0:
            logger.debug(f"Iteration {iteration}: change {residual:.3e}")
        if residual <= config.tol:
            break
    else:
        raise ConvergenceError(
            f"Value iteration did not reach tol {config.tol:.1e} in {cap} iterations (change {residual:.3e})",
            iterations=cap, residual=residual,
            diagnostics={'n': config.n, 'lambda_n': operator.lam})

    field = ValueField(operator.grid, values)
    concavity = is_concave(field, CONCAVITY_TOL)
    if not concavity.ok:
        logger.warning(f"v_n is not concave on the grid: second difference {concavity.worst_violation:.3e} "
                       f"at {concavity.worst_point}")
    logger.info(f"Value iteration converged in {iteration} iterations (change {residual:.3e})")
    return DPResult(field, iteration, residual, operator.lam, concavity, operator.clamped, profiles)


def solve_vn(spec, config):
    """v_n on the belief grid (see value_iteration for the diagnostics)."""
    return value_iteration(spec, config).field


class GuaranteeReport(NamedTuple):
    ok: bool
    worst_shortfall: float
    worst_point: np.ndarray


def guarantee_check(spec, field, config, slack=None, profiles=None):
    """
    Replay the maximizing strategy at every grid point against every pure b.

    The guaranteed amount must be at least field(p) - tol - slack; the default
    slack is the change tolerance scaled by the contraction factor.
    """
    operator = ShapleyOperator(spec, config)
    if profiles is None:
        _, profiles = operator.apply_values(field.values)
    guaranteed = operator.guarantee(field.values, profiles)
    slack = config.tol / operator.lam if slack is None else slack
    shortfall = field.values - guaranteed
    k = int(np.argmax(shortfall))
    ok = bool(shortfall[k] <= config.tol + slack)
    if not ok:
        logger.warning(f"Strategy guarantee falls short by {shortfall[k]:.3e} at {operator.grid.points[k]}")
    return GuaranteeReport(ok, float(shortfall[k]), np.array(operator.grid.points[k]))


@dataclass(frozen=True, eq=False)
class GridPolicy:
    """A strategy x(p) in Delta(A)^S for every point of a belief grid."""
    grid: BeliefGrid
    profiles: np.ndarray
    values: np.ndarray

    def profiles_at(self, points):
        """Strategies of the grid points nearest to beliefs (N, S), shape (N, S, A)."""
        idx, w = self.grid.stencil(np.atleast_2d(points))
        nearest = idx[np.arange(len(idx)), np.argmax(w, axis=1)]
        return self.profiles[nearest]

    def profile_at(self, p):
        return self.profiles_at(np.asarray(p, dtype=float)[None, :])[0]


def optimal_policy(spec, config, field=None):
    """
    Maximizing strategies at every grid point, refined by one coordinate-ascent pass.

    Returns:
        GridPolicy
    """
    operator = ShapleyOperator(spec, config)
    if field is None:
        field = value_iteration(spec, config, operator).field
    values, profiles = operator.apply_values(field.values, refine=True)
    return GridPolicy(operator.grid, profiles, values)


def convergence_study(spec, n_list, config, reference=None, closed_form=None):
    """
    Distance of v_n to a reference field as n grows.

    Args:
        spec (GameSpec): The game
        n_list (list): Increasing stage frequencies
        config (DPConfig): Grid settings (its n is replaced by each entry)
        reference (ValueField): Limit field; defaults to the HJ solution on the same grid
        closed_form (callable): Optional exact limit, beliefs (N, S) -> values (N,)

    Returns:
        pd.DataFrame: n, lambda_n, iterations, residual, dist_reference,
            dist_closed_form, step2_bound, monotone
    """
    n_list = list(n_list)
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError(f"n_list must be increasing, got {n_list}")
    if reference is None:
        from src.hj import Hamiltonian, ObstacleConfig, solve_obstacle
        reference = solve_obstacle(Hamiltonian(spec), BeliefGrid(spec.n_states, config.resolution),
                                   ObstacleConfig(resolution=config.resolution)).field

    c = 2.0 * spec.rate.max_exit_rate
    rows = []
    for n in n_list:
        result = value_iteration(spec, replace(config, n=n))
        points = result.field.grid.points
        row = {
            'n': n,
            'lambda_n': result.lambda_n,
            'iterations': result.iterations,
            'residual': result.residual,
            'dist_reference': float(np.abs(result.field.values - reference.evaluate(points)).max())
            if reference is not None else np.nan,
            'dist_closed_form': float(np.abs(result.field.values - closed_form(points)).max())
            if closed_form is not None else np.nan,
            'step2_bound': step2_error_bound(spec.n_states, spec.discount, n, c),
        }
        rows.append(row)
        logger.info(f"n={n}: distance to reference {row['dist_reference']:.4g}")

    frame = pd.DataFrame(rows)
    column = 'dist_reference' if reference is not None else 'dist_closed_form'
    increments = frame[column].diff().fillna(0.0)
    frame['monotone'] = increments <= MONOTONE_SLACK
    if not frame['monotone'].all():
        logger.warning(f"{column} increased with n beyond {MONOTONE_SLACK:.0e}")
    return frame

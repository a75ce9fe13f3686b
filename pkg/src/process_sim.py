"""
Belief Processes and Game Play

Belief processes in S(p) are a deterministic flow p*_t up to a switch time
theta, followed by a Markov jump process on a finite set of beliefs:

- deterministic_flow: theta = inf, the uninformed player learns nothing
- fully_revealing: theta = 0, p_t = delta_{s_t}
- two_state_optimal: flow into [p_lo, p_hi], then jumps between p_lo and p_hi
- custom: any jump-rate table on a finite belief set

Also here: finite splitting constructions (one shot and along a chain),
Monte Carlo evaluation of E int r e^{-rt} u(p_t) dt, the martingale and
optimality checks, and simulation of the discretized game.

Randomness:
- Every simulation takes a root seed and splits it per chunk of paths with
  SeedSequence.spawn, so results do not depend on the thread count
- Integrals along a path are exact between jumps; the flow part is shared by
  all paths and computed once by quadrature
"""

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy.linalg import expm

from src.analysis import QUADRATURE_TOL, tau_from_time, tau_quadrature
from src.chain import SIMULATION_CHUNK, belief_flow_batch, spectral_gap, transition
from src.envelope import ValueField, cav
from src.game_model import AbstractU, GameSpec, as_belief, stage_weight
from src.matrix_game import solve, solve_2x2_batch, u_evaluator
from src.utils import parallel_map

logger = logging.getLogger(__name__)

PROCESS_RECIPES = ('deterministic_flow', 'fully_revealing', 'two_state_optimal', 'custom')
PLAY_STRATEGIES = ('splitting_optimal', 'non_revealing', 'fully_revealing')
SPLIT_TOL = 1e-10
EXACT_TOL = 1e-12
TAIL_TOL = 1e-6
PLAY_TAIL = 1e-4
Z_95 = 1.959963984540054


# ---------------------------------------------------------------------------
# Splittings
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SplittingPlan:
    """
    A joint law over labels x states with label marginal `weights` and
    conditional law `posteriors[l]` of the state given label l.
    """
    labels: tuple
    weights: np.ndarray
    posteriors: np.ndarray
    joint: np.ndarray

    @property
    def state_marginal(self):
        return self.joint.sum(axis=0)

    @property
    def label_marginal(self):
        return self.joint.sum(axis=1)

    def conditional(self, label):
        l = self.labels.index(label)
        return self.joint[l] / self.joint[l].sum()

    def residual(self, p):
        """Largest deviation from the marginal and Bayes conditions."""
        used = self.weights > 0
        conditionals = self.joint[used] / self.joint[used].sum(axis=1, keepdims=True)
        return float(max(np.abs(self.state_marginal - p).max(),
                         np.abs(self.label_marginal - self.weights).max(),
                         np.abs(conditionals - self.posteriors[used]).max()))


def static_split(p, weights, posteriors, labels=None):
    """
    Joint law P(l, s) = weights[l] posteriors[l][s] realizing the split of p.

    Raises:
        ValueError: If the weights are not a distribution, a posterior is not
            a belief, or sum_l weights[l] posteriors[l] differs from p by more than 1e-10
    """
    posteriors = np.atleast_2d(np.asarray(posteriors, dtype=float))
    weights = np.atleast_1d(np.asarray(weights, dtype=float))
    p = as_belief(p, posteriors.shape[1])
    if weights.shape != (len(posteriors),):
        raise ValueError(f"Got {weights.size} weights for {len(posteriors)} posteriors")
    as_belief(weights, len(weights), name="weights")
    for l, q in enumerate(posteriors):
        as_belief(q, len(p), name=f"posteriors[{l}]")
    barycenter = weights @ posteriors
    gap = float(np.abs(barycenter - p).max())
    if gap > SPLIT_TOL:
        raise ValueError(f"Posteriors average to {barycenter.tolist()}, not the prior {p.tolist()} (gap {gap:.3e})")
    labels = tuple(labels) if labels is not None else tuple(f"l{i + 1}" for i in range(len(weights)))
    joint = weights[:, None] * posteriors
    return SplittingPlan(labels, weights, posteriors, joint)


@dataclass(eq=False)
class BeliefTree:
    """
    A finite tree of belief histories: `belief` is q_m at this node and
    `children` lists (probability, subtree) pairs for q_{m+1}.
    """
    belief: np.ndarray
    children: list = field(default_factory=list)

    def __post_init__(self):
        self.belief = np.asarray(self.belief, dtype=float)

    @property
    def depth(self):
        return 1 + max((child.depth for _, child in self.children), default=-1)

    def walk(self, path=()):
        yield path, self
        for k, (_, child) in enumerate(self.children):
            yield from child.walk(path + (k,))


def _node_name(path):
    return "root" + "".join(f"/{k}" for k in path)


@dataclass(eq=False)
class DynamicSplitting:
    """
    Kernels mu_m(q^m, s_{m+1}; q_{m+1}) choosing the next belief from the
    history and the next state, for a finite belief tree and a transition matrix.

    Attributes:
        tree (BeliefTree): The law Q of the belief sequence
        transition_matrix (np.ndarray): Pi, one step of the state chain
        kernels (dict): node path -> (S, C) array, row s' the law of the child given s'
        pruned (list): Node paths where some next state has probability zero
    """
    tree: BeliefTree
    transition_matrix: np.ndarray
    kernels: dict
    pruned: list

    def composed_kernel(self, path, state):
        """nu_m(q^m, s_m; child, s_{m+1}) = pi(s_{m+1} | s_m) mu_m(q^m, s_{m+1}; child), shape (C, S)."""
        mu = self.kernels[path]
        return (self.transition_matrix[state][:, None] * mu).T

    def enumerate_conditions(self):
        """
        Exact enumeration of the induced law over histories and states.

        Returns:
            tuple: (C1 residual, C2 residual): largest deviation of the belief
                marginal from Q and of the state conditional from q_m
        """
        root = self.tree
        c1 = 0.0
        c2 = 0.0
        stack = [((), root, np.array(root.belief), 1.0)]
        while stack:
            path, node, mass, q_prob = stack.pop()
            total = mass.sum()
            c1 = max(c1, abs(total - q_prob))
            if total > 0:
                c2 = max(c2, float(np.abs(mass / total - node.belief).max()))
            if not node.children:
                continue
            mu = self.kernels[path]
            # mass over s_{m+1}, then split by the kernel
            moved = mass @ self.transition_matrix
            for k, (prob, child) in enumerate(node.children):
                stack.append((path + (k,), child, moved * mu[:, k], q_prob * prob))
        return float(c1), float(c2)


def dynamic_split(tree, transition_matrix, tol=SPLIT_TOL):
    """
    Build the kernels mu_m(q^m, s'; c) = theta(c, s') / theta(s') with
    theta(c, s') = Q(c) q_c(s') at every inner node of a belief tree.

    Raises:
        ValueError: If E[q_{m+1} | q^m] differs from Pi^T q_m at some node
    """
    Pi = np.asarray(transition_matrix, dtype=float)
    S = Pi.shape[0]
    if Pi.shape != (S, S) or np.any(Pi < 0) or np.any(np.abs(Pi.sum(axis=1) - 1.0) > tol):
        raise ValueError("Transition matrix must be square and row-stochastic")
    kernels, pruned = {}, []
    for path, node in tree.walk():
        as_belief(node.belief, S, name=f"{_node_name(path)}.belief")
        if not node.children:
            continue
        probs = np.array([prob for prob, _ in node.children], dtype=float)
        beliefs = np.array([child.belief for _, child in node.children])
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > tol:
            raise ValueError(f"Child probabilities at {_node_name(path)} do not form a distribution")
        expected = node.belief @ Pi
        gap = float(np.abs(probs @ beliefs - expected).max())
        if gap > tol:
            raise ValueError(f"Martingale condition fails at {_node_name(path)}: "
                             f"E[q_next] = {(probs @ beliefs).tolist()}, expected {expected.tolist()}")
        theta = (probs[:, None] * beliefs).T            # (S, C)
        marginal = theta.sum(axis=1)
        mu = np.zeros_like(theta)
        live = marginal > 0
        mu[live] = theta[live] / marginal[live, None]
        if not live.all():
            pruned.append(path)
            logger.info(f"States {np.flatnonzero(~live).tolist()} unreachable after {_node_name(path)}, branch pruned")
        kernels[path] = mu
    return DynamicSplitting(tree, Pi, kernels, pruned)


# ---------------------------------------------------------------------------
# Belief processes
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BeliefProcess:
    """
    Deterministic flow on [0, theta), then a jump process on `support`.

    Attributes:
        recipe (str): One of PROCESS_RECIPES
        rate (np.ndarray): Generator R of the state chain
        p (np.ndarray): Initial belief
        theta (float): Switch time (inf for the pure flow)
        support (np.ndarray): (K, S) beliefs of the jump part
        generator (np.ndarray): (K, K) jump rates between support points
        initial_law (np.ndarray): Law over the support at theta
    """
    recipe: str
    rate: np.ndarray
    p: np.ndarray
    theta: float = float('inf')
    support: np.ndarray = None
    generator: np.ndarray = None
    initial_law: np.ndarray = None

    def __post_init__(self):
        if self.recipe not in PROCESS_RECIPES:
            raise ValueError(f"Unknown process recipe '{self.recipe}', expected one of {list(PROCESS_RECIPES)}")
        if self.theta < 0:
            raise ValueError(f"Switch time must be nonnegative, got {self.theta}")
        object.__setattr__(self, 'rate', np.asarray(self.rate, dtype=float))
        object.__setattr__(self, 'p', as_belief(self.p, self.rate.shape[0]))
        if not self.has_jumps:
            return
        for name in ('support', 'generator', 'initial_law'):
            if getattr(self, name) is None:
                raise ValueError(f"A process with a jump part needs {name}")
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        K = len(self.support)
        if self.generator.shape != (K, K) or self.initial_law.shape != (K,):
            raise ValueError(f"Jump part shapes do not match a support of {K} beliefs")
        off = self.generator - np.diag(np.diag(self.generator))
        if np.any(off < 0) or np.any(np.abs(self.generator.sum(axis=1)) > 1e-9):
            raise ValueError("Jump rates must be nonnegative with rows summing to zero")
        as_belief(self.initial_law, K, name="initial_law")

    @property
    def has_jumps(self):
        return math.isfinite(self.theta)

    @property
    def n_states(self):
        return self.rate.shape[0]

    @property
    def rho_tilde(self):
        """(rate p_lo -> p_hi, rate p_hi -> p_lo) of a two-point jump part."""
        return float(self.generator[0, 1]), float(self.generator[1, 0])

    def two_point_transition(self, t):
        """Q_t = exp(t G) between the support points."""
        if t < 0:
            raise ValueError(f"Time must be nonnegative, got {t}")
        return expm(t * self.generator)

    def law_at(self, t):
        """Law over the support at time t >= theta."""
        return self.initial_law @ self.two_point_transition(t - self.theta)

    def expected_belief(self, t):
        """E[p_t]; for a process in S(p) this is the flow p*_t."""
        if t < self.theta:
            return belief_flow_batch(self.rate, self.p, [t])[0]
        return self.law_at(t) @ self.support

    def switch_belief(self):
        return belief_flow_batch(self.rate, self.p, [self.theta])[0] if self.has_jumps else None

    def sample(self, times, paths, seed=42):
        """
        Beliefs of independent paths at the given times.

        Returns:
            np.ndarray: (paths, len(times), S)
        """
        times = np.asarray(times, dtype=float)
        out = np.empty((paths, len(times), self.n_states))
        before = times < self.theta
        if before.any():
            out[:, before] = belief_flow_batch(self.rate, self.p, times[before])[None, :, :]
        if (~before).any():
            _, states = _simulate_jump_part(self, paths, seed, query=times[~before])
            out[:, ~before] = self.support[states]
        return out


def deterministic_flow(rate, p):
    """The non-revealing process p_t = p*_t."""
    return BeliefProcess('deterministic_flow', rate, p)


def fully_revealing(rate, p):
    """p_t = delta_{s_t}: beliefs jump between vertices with the chain."""
    R = np.asarray(rate, dtype=float)
    p = as_belief(p, R.shape[0])
    return BeliefProcess('fully_revealing', R, p, theta=0.0, support=np.eye(R.shape[0]),
                         generator=R, initial_law=p)


def custom_process(rate, p, support, generator, initial_law, theta=0.0):
    """A user jump-rate table on a finite belief set, entered at time theta."""
    return BeliefProcess('custom', rate, p, theta=theta, support=support,
                         generator=generator, initial_law=initial_law)


def _extension_holds(u_field, lo, hi, tol):
    """u equals cav u at every grid point of [lo, hi] (two states, first coordinate)."""
    grid = u_field.grid
    x = grid.points[:, 0]
    inside = (x >= lo - 1e-12) & (x <= hi + 1e-12)
    gap = cav(u_field).values[inside] - u_field.values[inside]
    return bool(np.all(gap <= tol * max(1.0, float(np.abs(u_field.values).max()))))


def two_state_optimal_process(rho12, rho21, p_lo, p_hi, p, u_field=None, tol=1e-9):
    """
    Optimal belief process of a two-state game whose cav u is affine on
    [p_lo, p_hi] around the invariant belief.

    Beliefs are probabilities of the first state. The flow runs until it
    enters [p_lo, p_hi] at theta, splits into p_lo and p_hi so that the mean
    is p*_theta, and then jumps p_lo -> p_hi at rate
    ((1 - p_lo) rho21 - p_lo rho12) / (p_hi - p_lo) and p_hi -> p_lo at rate
    (p_hi rho12 - (1 - p_hi) rho21) / (p_hi - p_lo).

    Args:
        rho12, rho21 (float): Switching rates s1 -> s2 and s2 -> s1
        p_lo, p_hi (float): Split points with p_lo < p_inf < p_hi
        p (float or array-like): Initial belief
        u_field (ValueField): Optional u; when p lies outside [p_lo, p_hi] it
            must satisfy u = cav u between p and the interval

    Raises:
        ValueError: If p_inf is not strictly inside (p_lo, p_hi), a rate is
            negative, or the flow part would leave the set where u = cav u
    """
    if rho12 < 0 or rho21 < 0 or rho12 + rho21 <= 0:
        raise ValueError(f"Switching rates must be nonnegative and not both zero, got {rho12}, {rho21}")
    p0 = float(as_belief(p, 2)[0])
    p_inf = rho21 / (rho12 + rho21)
    if not 0.0 <= p_lo < p_inf < p_hi <= 1.0:
        raise ValueError(f"Need 0 <= p_lo < p_inf < p_hi <= 1, got p_lo={p_lo}, p_inf={p_inf:.6g}, p_hi={p_hi}")
    width = p_hi - p_lo
    up = ((1.0 - p_lo) * rho21 - p_lo * rho12) / width
    down = (p_hi * rho12 - (1.0 - p_hi) * rho21) / width
    if up < 0 or down < 0:
        raise ValueError(f"Two-point rates are negative ({up:.6g}, {down:.6g})")

    speed = rho12 + rho21
    if p0 < p_lo:
        theta = math.log((p0 - p_inf) / (p_lo - p_inf)) / speed
        segment = (p0, p_lo)
    elif p0 > p_hi:
        theta = math.log((p0 - p_inf) / (p_hi - p_inf)) / speed
        segment = (p_hi, p0)
    else:
        theta, segment = 0.0, None
    if segment is not None and u_field is not None and not _extension_holds(u_field, *segment, tol):
        raise ValueError(f"Belief {p0} lies outside [{p_lo}, {p_hi}] and u differs from cav u on {list(segment)}")

    R = np.array([[-rho12, rho12], [rho21, -rho21]])
    start = p_inf + (p0 - p_inf) * math.exp(-speed * theta)
    q_hi = min(max((start - p_lo) / width, 0.0), 1.0)
    logger.debug(f"Two-state process: theta={theta:.6g}, rates ({up:.6g}, {down:.6g}), q_hi={q_hi:.6g}")
    return BeliefProcess(
        'two_state_optimal', R, [p0, 1.0 - p0], theta=theta,
        support=np.array([[p_lo, 1.0 - p_lo], [p_hi, 1.0 - p_hi]]),
        generator=np.array([[-up, up], [down, -down]]),
        initial_law=np.array([1.0 - q_hi, q_hi]),
    )


def _jump_chunk(G, law, start, stop, n_paths, seed_seq, values=None, r=None, query=()):
    """Vectorized Gillespie on a finite support; returns (discounted integrals, states at query times)."""
    rng = np.random.default_rng(seed_seq)
    K = G.shape[0]
    exit_rates = -np.diag(G)
    jump = np.clip(G, 0.0, None)
    np.fill_diagonal(jump, 0.0)
    totals = jump.sum(axis=1, keepdims=True)
    cumulative = np.cumsum(np.divide(jump, totals, out=np.zeros_like(jump), where=totals > 0), axis=1)

    query = np.asarray(query, dtype=float)
    state = rng.choice(K, size=n_paths, p=law)
    t = np.full(n_paths, float(start))
    integral = np.zeros(n_paths)
    at = np.zeros((n_paths, len(query)), dtype=int)
    active = np.arange(n_paths)
    while active.size:
        rates = exit_rates[state[active]]
        hold = np.full(active.size, np.inf)
        moving = rates > 0
        hold[moving] = rng.exponential(1.0 / rates[moving])
        begin = t[active]
        end = np.minimum(begin + hold, stop)
        for qi, q in enumerate(query):
            inside = (q >= begin) & ((q < end) | (end >= stop))
            at[active[inside], qi] = state[active[inside]]
        if values is not None:
            integral[active] += values[state[active]] * (np.exp(-r * begin) - np.exp(-r * end))
        jumped = begin + hold < stop
        t[active] = end
        movers = active[jumped]
        if movers.size:
            draws = rng.random(movers.size)
            state[movers] = np.minimum((draws[:, None] > cumulative[state[movers]]).sum(axis=1), K - 1)
        active = movers
    return integral, at


def _simulate_jump_part(process, paths, seed, values=None, r=None, stop=None, query=()):
    query = np.asarray(query, dtype=float)
    if stop is None:
        stop = float(query.max()) if query.size else process.theta
    sizes = [SIMULATION_CHUNK] * (paths // SIMULATION_CHUNK)
    if paths % SIMULATION_CHUNK:
        sizes.append(paths % SIMULATION_CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    results = parallel_map(
        lambda job: _jump_chunk(process.generator, process.initial_law, process.theta, stop,
                                job[0], job[1], values, r, query),
        list(zip(sizes, seeds)))
    return np.concatenate([res[0] for res in results]), np.vstack([res[1] for res in results])


def _u_callable(u):
    if isinstance(u, ValueField):
        return u.evaluate
    if isinstance(u, (GameSpec, AbstractU)):
        return u_evaluator(u)
    if callable(u):
        return u
    raise TypeError(f"Cannot evaluate u from {type(u).__name__}")


class P1Estimate(NamedTuple):
    estimate: float
    half_width: float
    paths: int
    flow_part: float
    truncation_bound: float


def evaluate_p1(process, u, r, paths=10_000, seed=42, tail=TAIL_TOL, tol=QUADRATURE_TOL):
    """
    Monte Carlo estimate of E int_0^inf r e^{-rt} u(p_t) dt.

    Args:
        process (BeliefProcess): The belief process
        u (ValueField, GameSpec, AbstractU or callable): u as a function of beliefs (N, S)
        r (float): Discount rate
        paths (int): Number of paths, at least 2
        seed (int): Root seed
        tail (float): Jump paths are followed up to T with e^{-rT} <= tail

    Returns:
        P1Estimate: mean, 95% normal half-width, paths, the shared flow
            part and the truncation bound e^{-rT} max|u|
    """
    if paths < 2:
        raise ValueError(f"Need at least two paths, got {paths}")
    if r <= 0:
        raise ValueError(f"Discount rate must be positive, got {r}")
    evaluate = _u_callable(u)

    theta_tau = float(tau_from_time(process.theta, r))
    flow_part = 0.0
    if theta_tau > 0:
        flow_part = float(tau_quadrature(lambda t: evaluate(belief_flow_batch(process.rate, process.p, t)),
                                         r, tol, interval=(0.0, theta_tau)))
    if not process.has_jumps:
        return P1Estimate(flow_part, 0.0, paths, flow_part, 0.0)

    values = np.asarray(evaluate(process.support), dtype=float)
    horizon = process.theta - math.log(tail) / r
    integrals, _ = _simulate_jump_part(process, paths, seed, values=values, r=r, stop=horizon)
    estimate = flow_part + float(integrals.mean())
    half_width = Z_95 * float(integrals.std(ddof=1)) / math.sqrt(paths)
    truncation = math.exp(-r * horizon) * float(np.abs(values).max())
    logger.info(f"P1 estimate {estimate:.6f} +/- {half_width:.2e} over {paths} paths ({process.recipe})")
    return P1Estimate(estimate, half_width, paths, flow_part, truncation)


class MartingaleReport(NamedTuple):
    ok: bool
    table: pd.DataFrame


def martingale_consistency_check(process, h_list=(0.1, 0.5), t_list=(0.5, 1.0, 2.0), paths=10_000,
                                 seed=42, z=3.0, bins=10, floor=1e-10):
    """
    Check E[p_{t+h} - P_h^T p_t | p_t] = 0 on bins of p_t.

    Beliefs taking at most `bins` distinct values are grouped by value,
    otherwise by quantiles of the first coordinate. A bin fails when its mean
    discrepancy exceeds z standard errors (plus `floor`).
    """
    times = sorted({float(t) for t in t_list} | {float(t + h) for t in t_list for h in h_list})
    sample = process.sample(times, paths, seed)
    column = {t: k for k, t in enumerate(times)}
    rows = []
    for t in t_list:
        now = sample[:, column[float(t)]]
        rounded = np.round(now, 9)
        distinct, groups = np.unique(rounded, axis=0, return_inverse=True)
        groups = np.asarray(groups).ravel()
        if len(distinct) > bins:
            edges = np.quantile(now[:, 0], np.linspace(0, 1, bins + 1)[1:-1])
            groups = np.searchsorted(edges, now[:, 0], side='right')
        for h in h_list:
            later = sample[:, column[float(t + h)]]
            diff = later - now @ transition(process.rate, h)
            for g in np.unique(groups):
                members = diff[groups == g]
                if len(members) < 2:
                    continue
                mean = members.mean(axis=0)
                se = members.std(axis=0, ddof=1) / math.sqrt(len(members))
                worst = int(np.argmax(np.abs(mean) - z * se))
                rows.append({
                    't': t, 'h': h, 'bin': int(g), 'count': len(members),
                    'mean': float(mean[worst]), 'std_error': float(se[worst]),
                    'violation': bool(abs(mean[worst]) > z * se[worst] + floor),
                })
    table = pd.DataFrame(rows)
    ok = bool(len(table) == 0 or not table['violation'].any())
    if not ok:
        logger.warning(f"Martingale check failed in {int(table['violation'].sum())} of {len(table)} bins")
    return MartingaleReport(ok, table)


class OptimalityReport(NamedTuple):
    ok: bool
    in_nonrevealing_set: bool
    worst_membership_point: np.ndarray
    chords_flat: bool
    worst_chord: float
    worst_chord_pair: tuple
    continuous_martingale_free: bool
    note: str


def _visited_flow(process, points=200):
    if process.has_jumps:
        if process.theta == 0:
            return np.empty((0, process.n_states))
        horizon = process.theta
    else:
        gap = spectral_gap(process.rate)
        horizon = 30.0 / gap if 0 < gap < np.inf else 0.0
    times = np.linspace(0.0, horizon, points) if horizon > 0 else np.zeros(1)
    return belief_flow_batch(process.rate, process.p, times)


def _reachable(process):
    reached = set(np.flatnonzero(process.initial_law > 0).tolist())
    frontier = list(reached)
    while frontier:
        i = frontier.pop()
        for j in np.flatnonzero(process.generator[i] > 0):
            if int(j) not in reached:
                reached.add(int(j))
                frontier.append(int(j))
    return sorted(reached)


def _chord_residual(field, q, q_next):
    """v(q') - v(q) - <Dv(q), q' - q>, the derivative taken one grid cell toward q'."""
    direction = q_next - q
    length = float(np.abs(direction).max())
    if length == 0:
        return 0.0
    eps = min(1.0, field.grid.h / length)
    slope = (field.evaluate(q + eps * direction) - field.evaluate(q)) / eps
    return float(field.evaluate(q_next) - field.evaluate(q) - slope)


def verify_optimality_conditions(process, v_field, tol=2e-3):
    """
    Sufficient conditions for a belief process to attain the value.

    (i) every visited belief is within one grid cell of a pde_active point of
    v_field, and every jump q -> q' satisfies v(q') = v(q) + <Dv(q), q' - q>
    within tol; (ii) no continuous martingale part, which holds for every
    process built here (flow plus finitely many jumps). The reachable jumps
    are enumerated exactly rather than sampled.

    Args:
        process (BeliefProcess): The candidate process
        v_field (ObstacleField): Converged solution with active-set tags
    """
    grid = v_field.grid
    pde = v_field.tags == 'pde_active'
    visited = [_visited_flow(process)]
    jumps = []
    if process.has_jumps:
        reachable = _reachable(process)
        visited.append(process.support[reachable])
        start = process.switch_belief()
        for k in np.flatnonzero(process.initial_law > 0):
            jumps.append((start, process.support[k]))
        for i in reachable:
            for j in np.flatnonzero(process.generator[i] > 0):
                jumps.append((process.support[i], process.support[int(j)]))
    visited = np.vstack(visited)

    active = np.asarray(grid.points)[pde]
    member = np.zeros(len(visited), dtype=bool)
    if len(active):
        for start in range(0, len(visited), 64):
            block = visited[start:start + 64]
            distance = np.abs(block[:, None, :] - active[None, :, :]).max(axis=2)
            member[start:start + 64] = (distance <= grid.h * (1.0 + 1e-9)).any(axis=1)
    worst_point = None if member.all() else visited[int(np.argmin(member))]

    worst_chord, worst_pair = 0.0, None
    for q, q_next in jumps:
        residual = abs(_chord_residual(v_field.field, np.asarray(q), np.asarray(q_next)))
        if residual > worst_chord:
            worst_chord, worst_pair = residual, (np.asarray(q).tolist(), np.asarray(q_next).tolist())

    in_set = bool(member.all())
    flat = worst_chord <= tol
    note = "flow plus finitely many jumps: no continuous martingale part"
    if not (in_set and flat):
        logger.warning(f"Optimality conditions fail for {process.recipe}: membership {in_set}, "
                       f"worst chord {worst_chord:.3e}")
    return OptimalityReport(in_set and flat, in_set, worst_point, flat, worst_chord, worst_pair, True, note)


# ---------------------------------------------------------------------------
# Game play
# ---------------------------------------------------------------------------

class PlayResult(NamedTuple):
    estimate: float
    half_width: float
    stages: int
    tail_bound: float
    zero_probability_updates: int
    paths: int


def _average_game_strategies(payoff, beliefs):
    """Optimal (x, y) of the average game at every belief, solving each distinct belief once."""
    distinct, inverse = np.unique(np.round(beliefs, 12), axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    matrices = np.einsum('ns,sab->nab', distinct, payoff)
    if matrices.shape[1:] == (2, 2):
        _, x, y = solve_2x2_batch(matrices)
    else:
        solutions = parallel_map(solve, list(matrices))
        x = np.array([s.x_star for s in solutions])
        y = np.array([s.y_star for s in solutions])
    return x[inverse], y[inverse]


def _draw(rng, probabilities):
    """One index per row of a stack of distributions."""
    cumulative = np.cumsum(probabilities, axis=1)
    draws = rng.random(len(probabilities)) * cumulative[:, -1]
    return np.minimum((draws[:, None] > cumulative).sum(axis=1), probabilities.shape[1] - 1)


def _play_chunk(spec, strategy, policy, P, lam, stages, n_paths, seed_seq):
    rng = np.random.default_rng(seed_seq)
    S = spec.n_states
    g = spec.payoff
    states = rng.choice(S, size=n_paths, p=spec.initial_belief)
    beliefs = np.tile(spec.initial_belief, (n_paths, 1))
    total = np.zeros(n_paths)
    zero_updates = 0
    revealing = None
    if strategy == 'fully_revealing':
        revealing, _ = _average_game_strategies(g, np.eye(S))
    rows = np.arange(n_paths)

    for k in range(stages):
        x_avg, y = _average_game_strategies(g, beliefs)
        if strategy == 'non_revealing':
            x = np.repeat(x_avg[:, None, :], S, axis=1)
        elif strategy == 'fully_revealing':
            x = np.broadcast_to(revealing, (n_paths,) + revealing.shape)
        else:
            x = policy.profiles_at(beliefs)
        a = _draw(rng, x[rows, states])
        b = _draw(rng, y)
        total += lam * (1.0 - lam) ** k * g[states, a, b]

        likelihood = x[rows, :, a]                       # x_s(a) for every s
        marginal = (beliefs * likelihood).sum(axis=1)
        observed = marginal > 0
        zero_updates += int((~observed).sum())
        posterior = beliefs.copy()
        posterior[observed] = beliefs[observed] * likelihood[observed] / marginal[observed, None]
        beliefs = posterior @ P
        states = _draw(rng, P[states])
    return total, zero_updates


def play_game(spec, n, strategy1='splitting_optimal', stages=None, paths=20_000, seed=42, policy=None):
    """
    Simulate the game played every 1/n.

    Player 1 uses `strategy1`: 'non_revealing' (an optimal strategy of the
    average game at the public belief, whatever the state), 'fully_revealing'
    (an optimal strategy of the game of the current state) or
    'splitting_optimal' (the dynamic programming policy). Player 2 plays an
    optimal strategy of the average game at the public belief, updates it by
    Bayes' rule on player 1's action and moves it by P_{1/n}^T.

    Args:
        spec (GameSpec): Exogenous one-sided game
        n (int): Stage frequency
        stages (int): K; defaults to the smallest K with (1 - lambda_n)^K <= 1e-4
        paths (int): Number of simulated plays
        policy (GridPolicy): Required for 'splitting_optimal' unless computed here

    Returns:
        PlayResult
    """
    if strategy1 not in PLAY_STRATEGIES:
        raise ValueError(f"Unknown strategy '{strategy1}', expected one of {list(PLAY_STRATEGIES)}")
    if not isinstance(spec, GameSpec) or not spec.is_exogenous:
        raise ValueError("Game play needs a one-sided game with an exogenous generator")
    if paths < 2:
        raise ValueError(f"Need at least two paths, got {paths}")
    lam = stage_weight(spec.discount, n)
    if stages is None:
        stages = max(1, math.ceil(math.log(PLAY_TAIL) / math.log1p(-lam))) if lam < 1 else 1
    if strategy1 == 'splitting_optimal' and policy is None:
        from src.shapley_dp import DPConfig, optimal_policy
        policy = optimal_policy(spec, DPConfig(n=n))
    P = transition(spec.rate.matrix, 1.0 / n)

    sizes = [SIMULATION_CHUNK] * (paths // SIMULATION_CHUNK)
    if paths % SIMULATION_CHUNK:
        sizes.append(paths % SIMULATION_CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    logger.info(f"Playing {paths} games of {stages} stages, strategy {strategy1}, n={n}")
    results = parallel_map(lambda job: _play_chunk(spec, strategy1, policy, P, lam, stages, *job),
                           list(zip(sizes, seeds)))
    totals = np.concatenate([res[0] for res in results])
    zero_updates = sum(res[1] for res in results)
    if zero_updates:
        logger.warning(f"{zero_updates} observations had zero probability; beliefs kept unchanged")
    tail = (1.0 - lam) ** stages * spec.max_abs_payoff
    half_width = Z_95 * float(totals.std(ddof=1)) / math.sqrt(paths)
    return PlayResult(float(totals.mean()), half_width, stages, tail, zero_updates, paths)

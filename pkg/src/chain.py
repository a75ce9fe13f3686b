"""
Continuous-Time Markov Chains

Semigroup P_t = exp(tR) of a generator R, the deterministic belief flow
p*_t = P_t^T p, the invariant measure p*_inf, and exact (Gillespie) path
simulation of the state process.

Numerical Conventions:
1. Exponentials come from scipy.linalg.expm (scaling and squaring with Pade)
2. Round-off negatives in P_t are clamped to 0 and rows renormalized, so
   every returned matrix is exactly row-stochastic up to float rounding
3. Exponentials are cached by (hash of R, t); the cache is shared between
   threads and guarded by a lock
4. Random draws always come from a caller-seeded numpy Generator; batch
   simulations split their seed with SeedSequence.spawn
"""

import hashlib
import logging
import threading
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.linalg import expm
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from src.game_model import RateData
from src.utils import parallel_map

logger = logging.getLogger(__name__)

CACHE_LIMIT = 4096
SIMULATION_CHUNK = 10_000
RESIDUAL_TOL = 1e-10

_cache = {}
_cache_lock = threading.Lock()


class ReducibleChainError(ValueError):
    """The generator has more than one closed class, so p*_inf is not unique."""


def _stochastic(P):
    """Clamp negatives and renormalize rows (works on stacks of matrices)."""
    P = np.clip(P, 0.0, None)
    return P / P.sum(axis=-1, keepdims=True)


def _cache_key(R, t):
    R = np.ascontiguousarray(R, dtype=float)
    digest = hashlib.sha1(R.tobytes() + str(R.shape).encode()).hexdigest()
    return digest, float(t)


def clear_cache():
    with _cache_lock:
        _cache.clear()


def transition(R, t):
    """
    Transition matrix P_t = exp(tR).

    Args:
        R (array-like): Generator, shape (S, S)
        t (float): Elapsed time, t >= 0

    Returns:
        np.ndarray: Read-only row-stochastic matrix

    Raises:
        ValueError: If t is negative
    """
    if t < 0:
        raise ValueError(f"Time must be nonnegative, got {t}")
    R = np.asarray(R, dtype=float)
    key = _cache_key(R, t)
    with _cache_lock:
        hit = _cache.get(key)
    if hit is not None:
        return hit

    P = _stochastic(expm(t * R)) if t > 0 else np.eye(R.shape[0])
    P.setflags(write=False)
    with _cache_lock:
        if len(_cache) >= CACHE_LIMIT:
            logger.debug("Semigroup cache full, clearing")
            _cache.clear()
        _cache[key] = P
    return P


def transition_batch(R, times):
    """Stack of P_t for every t in times, shape (N, S, S)."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("Time must be nonnegative")
    R = np.asarray(R, dtype=float)
    return _stochastic(expm(times[:, None, None] * R[None, :, :]))


def belief_flow(R, p, t):
    """p*_t = P_t^T p, the belief of an observer who learns nothing."""
    p = np.asarray(p, dtype=float)
    q = np.clip(transition(R, t).T @ p, 0.0, None)
    return q / q.sum()


def belief_flow_batch(R, p, times):
    """p*_t for every t in times, shape (N, S)."""
    P = transition_batch(R, times)
    q = np.clip(np.einsum('nst,s->nt', P, np.asarray(p, dtype=float)), 0.0, None)
    return q / q.sum(axis=1, keepdims=True)


def is_irreducible(R):
    R = np.asarray(R, dtype=float)
    adjacency = (R > 0) & ~np.eye(R.shape[0], dtype=bool)
    n_components, _ = connected_components(csr_matrix(adjacency), directed=True, connection='strong')
    return n_components == 1


def invariant_measure(R):
    """
    Unique invariant measure pi of an irreducible generator, R^T pi = 0.

    Raises:
        ReducibleChainError: If the chain is not irreducible
    """
    R = np.asarray(R, dtype=float)
    if not is_irreducible(R):
        raise ReducibleChainError("Generator is reducible: the invariant measure is not unique")
    n = R.shape[0]
    A = np.vstack([R.T, np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    residual = float(np.abs(R.T @ pi).max())
    if residual > RESIDUAL_TOL:
        logger.warning(f"Invariant measure residual {residual:.3e} above {RESIDUAL_TOL:.0e}")
    return pi


def spectral_gap(R):
    """Smallest |Re(lambda)| over the nonzero eigenvalues of R (inf for a single state)."""
    eigenvalues = np.linalg.eigvals(np.asarray(R, dtype=float))
    rates = np.sort(np.abs(eigenvalues.real))
    nonzero = rates[1:]
    if nonzero.size == 0:
        return float('inf')
    return float(nonzero[0])


class Semigroup:
    """
    P_t for a possibly action-indexed generator.

    Args:
        rate (RateData or array-like): Exogenous matrix, or (S, S, A, B) tensor
    """

    def __init__(self, rate):
        if not isinstance(rate, RateData):
            arr = np.asarray(rate, dtype=float)
            rate = RateData.exogenous(arr) if arr.ndim == 2 else RateData.endogenous(arr)
        self.rate = rate

    def matrix(self, t, a=None, b=None):
        return transition(self.rate.generator(a, b), t)

    def flow(self, p, t, a=None, b=None):
        return belief_flow(self.rate.generator(a, b), p, t)

    def mixture(self, t, x, y):
        """P_t(x, y) = sum_ab x(a) y(b) P_t(a, b)."""
        if self.rate.kind == 'exogenous':
            return self.matrix(t)
        total = 0.0
        for a, xa in enumerate(np.asarray(x, dtype=float)):
            for b, yb in enumerate(np.asarray(y, dtype=float)):
                if xa * yb > 0:
                    total = total + xa * yb * self.matrix(t, a, b)
        return total


@dataclass(frozen=True, eq=False)
class ChainPath:
    """One trajectory on [0, horizon]: states[k] is held on [times[k], times[k+1])."""
    times: np.ndarray
    states: np.ndarray
    horizon: float

    @property
    def n_jumps(self):
        return len(self.times) - 1

    def state_at(self, t):
        if t < 0 or t > self.horizon:
            raise ValueError(f"Time {t} outside [0, {self.horizon}]")
        return int(self.states[np.searchsorted(self.times, t, side='right') - 1])

    def _durations(self):
        return np.diff(np.append(self.times, self.horizon))

    def occupation_fraction(self, n_states):
        occupation = np.bincount(self.states, weights=self._durations(), minlength=n_states)
        return occupation / self.horizon

    def sojourn_times(self, state):
        """Durations of completed visits to state (the censored last visit is dropped)."""
        durations = self._durations()[:-1]
        return durations[self.states[:-1] == state]


def _piecewise_generators(R, schedule, horizon):
    """[(start, end, generator)] covering [0, horizon]."""
    R = np.asarray(R, dtype=float)
    if R.ndim == 2:
        return [(0.0, horizon, R)]
    if not schedule:
        raise ValueError("An action-indexed generator needs an action schedule")
    starts = [float(s[0]) for s in schedule]
    if starts[0] != 0.0 or any(b <= a for a, b in zip(starts, starts[1:])):
        raise ValueError("Action schedule must start at 0 with increasing start times")
    segments = []
    for k, (start, a, b) in enumerate(schedule):
        end = starts[k + 1] if k + 1 < len(schedule) else horizon
        if start < horizon:
            segments.append((start, min(end, horizon), R[:, :, a, b]))
    return segments


def sample_path(R, s0, horizon, seed=None, rng=None, schedule=None):
    """
    Exact simulation of the state chain on [0, horizon].

    Args:
        R (array-like): Generator (S, S), or tensor (S, S, A, B) with schedule
        s0 (int): Initial state index
        horizon (float): T > 0
        seed (int): Seed used when rng is not given
        rng (np.random.Generator): Caller-owned generator
        schedule (list): [(start_time, a, b), ...] for action-indexed generators

    Returns:
        ChainPath
    """
    if horizon <= 0:
        raise ValueError(f"Horizon must be positive, got {horizon}")
    rng = rng if rng is not None else np.random.default_rng(seed)

    times, states = [0.0], [int(s0)]
    state, t = int(s0), 0.0
    for start, end, G in _piecewise_generators(R, schedule, horizon):
        t = start
        while True:
            rate = -G[state, state]
            if rate <= 0:
                break
            t += rng.exponential(1.0 / rate)
            if t >= end:
                break
            weights = np.clip(G[state], 0.0, None)
            weights[state] = 0.0
            state = int(rng.choice(len(weights), p=weights / weights.sum()))
            times.append(t)
            states.append(state)

    return ChainPath(np.array(times), np.array(states, dtype=int), float(horizon))


def _simulate_chunk(R, p, horizon, n_paths, seed_seq):
    """Vectorized Gillespie for n_paths independent paths; returns (initial, jumps, occupation)."""
    rng = np.random.default_rng(seed_seq)
    n = R.shape[0]
    exit_rates = -np.diag(R)
    jump = np.clip(R, 0.0, None)
    np.fill_diagonal(jump, 0.0)
    totals = jump.sum(axis=1, keepdims=True)
    cumulative = np.cumsum(np.divide(jump, totals, out=np.zeros_like(jump), where=totals > 0), axis=1)

    state = rng.choice(n, size=n_paths, p=p)
    initial = state.copy()
    t = np.zeros(n_paths)
    jumps = np.zeros(n_paths, dtype=int)
    occupation = np.zeros((n_paths, n))
    active = np.arange(n_paths)
    while active.size:
        rates = exit_rates[state[active]]
        hold = np.full(active.size, np.inf)
        moving = rates > 0
        hold[moving] = rng.exponential(1.0 / rates[moving])
        remaining = horizon - t[active]
        dt = np.minimum(hold, remaining)
        occupation[active, state[active]] += dt
        t[active] += dt
        jumped = hold < remaining
        movers = active[jumped]
        if movers.size:
            draws = rng.random(movers.size)
            rows = cumulative[state[movers]]
            state[movers] = np.minimum((draws[:, None] > rows).sum(axis=1), n - 1)
            jumps[movers] += 1
        active = movers
    return initial, jumps, occupation / horizon


def simulate_chain_summary(R, p, horizon, paths, seed=42, labels=None):
    """
    Jump counts and occupation fractions of many independent paths.

    Args:
        R (array-like): Generator (S, S)
        p (array-like): Law of the initial state
        horizon (float): T > 0
        paths (int): Number of paths
        seed (int): Root seed, split per chunk of paths
        labels (list): State labels for the column names

    Returns:
        pd.DataFrame: path, initial_state, jumps, occupation_<label> per state
    """
    if horizon <= 0:
        raise ValueError(f"Horizon must be positive, got {horizon}")
    if paths < 1:
        raise ValueError(f"Need at least one path, got {paths}")
    R = np.asarray(R, dtype=float)
    p = np.asarray(p, dtype=float)
    labels = list(labels) if labels is not None else [f"s{i + 1}" for i in range(R.shape[0])]

    sizes = [SIMULATION_CHUNK] * (paths // SIMULATION_CHUNK)
    if paths % SIMULATION_CHUNK:
        sizes.append(paths % SIMULATION_CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    logger.info(f"Simulating {paths} chain paths on [0, {horizon}] in {len(sizes)} chunks")

    results = parallel_map(lambda job: _simulate_chunk(R, p, horizon, *job), list(zip(sizes, seeds)))
    initial = np.concatenate([r[0] for r in results])
    jumps = np.concatenate([r[1] for r in results])
    occupation = np.vstack([r[2] for r in results])

    frame = pd.DataFrame({
        'path': np.arange(paths),
        'initial_state': [labels[i] for i in initial],
        'jumps': jumps,
    })
    for i, label in enumerate(labels):
        frame[f"occupation_{label}"] = occupation[:, i]
    return frame

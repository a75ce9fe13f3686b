import json

import numpy as np
import pytest

from src.game_model import AbstractU, GameSpec, GameSpecTwoSided, RateData, explicit_example


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size accuracy runs (deselect with -m \"not slow\")")


# Sample documents in the JSON interchange format
explicit_example_doc = {
    'states': ['s1', 's2'],
    'actions1': ['a1', 'a2'],
    'actions2': ['b1', 'b2'],
    'payoff': [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]],
    'rate': {'kind': 'exogenous', 'matrix': [[-1.0, 1.0], [1.0, -1.0]]},
    'discount': 1.0,
    'initial_belief': [0.5, 0.5],
}

endogenous_doc = {
    'states': ['s1', 's2'],
    'actions1': ['a1', 'a2'],
    'actions2': ['b1'],
    'payoff': [[[1.0], [0.0]], [[0.0], [1.0]]],
    # playing a1 makes the chain switch twice as fast
    'rate': {'kind': 'endogenous', 'tensor': [
        [[[-2.0], [-1.0]], [[2.0], [1.0]]],
        [[[2.0], [1.0]], [[-2.0], [-1.0]]],
    ]},
    'discount': 1.0,
    'initial_belief': [0.3, 0.7],
}

three_state_doc = {
    'states': ['s1', 's2', 's3'],
    'actions1': ['a1', 'a2', 'a3'],
    'actions2': ['b1', 'b2', 'b3'],
    'payoff': [np.diag([1.0, 0.0, 0.0]).tolist(), np.diag([0.0, 1.0, 0.0]).tolist(),
               np.diag([0.0, 0.0, 1.0]).tolist()],
    'rate': {'kind': 'exogenous', 'matrix': [[-1.0, 0.5, 0.5], [0.5, -1.0, 0.5], [0.5, 0.5, -1.0]]},
    'discount': 1.0,
    'initial_belief': [0.2, 0.3, 0.5],
}

two_sided_doc = {
    'states1': ['s1', 's2'],
    'states2': ['t1', 't2'],
    'actions1': ['a1', 'a2'],
    'actions2': ['b1', 'b2'],
    'payoff': np.zeros((2, 2, 2, 2)).tolist(),
    'rate1': [[-1.0, 1.0], [1.0, -1.0]],
    'rate2': [[-0.5, 0.5], [0.5, -0.5]],
    'discount': 1.0,
    'initial_belief1': [0.5, 0.5],
    'initial_belief2': [0.4, 0.6],
}

# Payoff table of a game whose u(p) = max(p, (1 - p)/2) is convex
convex_u_payoff = [[[1.0], [0.0]], [[0.0], [0.5]]]


def lemma_u_curve(p):
    """
    u = 3p on [0, 1/3] and 2.4(1 - p) on [2/3, 1]; strictly below the chord
    from (1/3, 1) to (2/3, 0.8) in between. cav u is affine on [1/3, 2/3].
    """
    p = np.asarray(p, dtype=float)
    chord = 1.0 - 0.6 * (p - 1.0 / 3.0)
    bump = 0.5 * 4.0 * (3.0 * p - 1.0) * (2.0 - 3.0 * p)
    return np.where(p <= 1.0 / 3.0, 3.0 * p, np.where(p >= 2.0 / 3.0, 2.4 * (1.0 - p), chord - bump))


def switching_rate(rho12, rho21):
    return RateData.exogenous([[-rho12, rho12], [rho21, -rho21]])


@pytest.fixture
def example_spec():
    """The switching example with r = pi = 1 (v(p) = 1/4 - (2p-1)^2/20)."""
    return explicit_example(r=1.0, pi=1.0)


@pytest.fixture
def make_game():
    """Factory for two-state one-sided games from a payoff table."""
    def _make(payoff, rho12=0.0, rho21=0.0, discount=1.0, p=0.5):
        payoff = np.asarray(payoff, dtype=float)
        return GameSpec(
            states=('s1', 's2'),
            actions1=tuple(f"a{i + 1}" for i in range(payoff.shape[1])),
            actions2=tuple(f"b{j + 1}" for j in range(payoff.shape[2])),
            payoff=payoff,
            rate=switching_rate(rho12, rho21),
            discount=discount,
            initial_belief=[p, 1.0 - p],
        )
    return _make


@pytest.fixture
def convex_u_spec(make_game):
    return make_game(convex_u_payoff, rho12=1.0, rho21=1.0)


@pytest.fixture
def lemma_u():
    """Abstract u on m = 300 with rho12 = rho21 = r = 1 (split interval [1/3, 2/3])."""
    m = 300
    return AbstractU(
        grid_resolution=m,
        values=lemma_u_curve(np.arange(m + 1) / m),
        rate=switching_rate(1.0, 1.0),
        discount=1.0,
        initial_belief=[0.2, 0.8],
    )


@pytest.fixture
def make_two_sided():
    """Factory for 2x2 two-sided games with action independent rates."""
    def _make(payoff, rate1=((-1.0, 1.0), (1.0, -1.0)), rate2=((-0.5, 0.5), (0.5, -0.5)), discount=1.0):
        return GameSpecTwoSided(
            states1=('s1', 's2'), states2=('t1', 't2'),
            actions1=('a1', 'a2'), actions2=('b1', 'b2'),
            payoff=payoff, rate1=rate1, rate2=rate2, discount=discount,
            initial_belief1=[0.5, 0.5], initial_belief2=[0.5, 0.5],
        )
    return _make


@pytest.fixture
def write_doc(tmp_path):
    """Write a document to a JSON file under tmp_path."""
    def _write(doc, name='spec.json'):
        path = tmp_path / name
        path.write_text(json.dumps(doc), encoding='utf-8')
        return path
    return _write


@pytest.fixture
def random_generator():
    """Factory for random irreducible generators."""
    def _make(rng, n):
        R = rng.uniform(0.1, 2.0, size=(n, n))
        np.fill_diagonal(R, 0.0)
        np.fill_diagonal(R, -R.sum(axis=1))
        return R
    return _make

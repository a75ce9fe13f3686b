import pytest

import numpy as np
from scipy.integrate import solve_ivp

from src.chain import (
    ReducibleChainError,
    Semigroup,
    belief_flow,
    belief_flow_batch,
    invariant_measure,
    is_irreducible,
    sample_path,
    simulate_chain_summary,
    spectral_gap,
    transition,
    transition_batch,
)
from tests.conftest import endogenous_doc
from src.game_model import from_document


@pytest.mark.dependency()
class TestSemigroup:
    """P_t = exp(tR) and its algebraic properties."""

    @pytest.mark.dependency()
    def test_identity_at_zero(self, random_generator):
        R = random_generator(np.random.default_rng(0), 3)
        assert np.array_equal(transition(R, 0.0), np.eye(3))

    @pytest.mark.dependency(depends=["TestSemigroup::test_identity_at_zero"])
    def test_stochastic_and_read_only(self, random_generator):
        R = random_generator(np.random.default_rng(1), 4)
        P = transition(R, 0.7)
        assert np.all(P >= 0)
        assert np.allclose(P.sum(axis=1), 1.0, atol=1e-14)
        with pytest.raises(ValueError):
            P[0, 0] = 1.0
        with pytest.raises(ValueError, match="nonnegative"):
            transition(R, -1.0)

    @pytest.mark.dependency(depends=["TestSemigroup::test_identity_at_zero"])
    def test_semigroup_property(self, random_generator):
        """P_{t+s} = P_t P_s on 100 random (R, t, s)"""
        rng = np.random.default_rng(42)
        for _ in range(100):
            R = random_generator(rng, int(rng.integers(2, 5)))
            t, s = rng.uniform(0.0, 3.0, size=2)
            residual = np.abs(transition(R, t + s) - transition(R, t) @ transition(R, s)).max()
            assert residual <= 1e-9

    @pytest.mark.dependency(depends=["TestSemigroup::test_identity_at_zero"])
    def test_two_state_closed_form(self):
        pi = 1.5
        R = [[-pi, pi], [pi, -pi]]
        for t in (0.1, 1.0, 4.0):
            stay = 0.5 + 0.5 * np.exp(-2.0 * pi * t)
            assert np.allclose(transition(R, t), [[stay, 1 - stay], [1 - stay, stay]], atol=1e-12)

    @pytest.mark.dependency(depends=["TestSemigroup::test_identity_at_zero"])
    def test_batch_matches_single(self, random_generator):
        R = random_generator(np.random.default_rng(3), 3)
        times = [0.0, 0.25, 1.0, 5.0]
        batch = transition_batch(R, times)
        for k, t in enumerate(times):
            assert np.allclose(batch[k], transition(R, t), atol=1e-13)


@pytest.mark.dependency()
class TestBeliefFlow:
    """p*_t solves dp/dt = R^T p and tends to the invariant measure."""

    @pytest.mark.dependency()
    def test_flow_against_ode(self, random_generator):
        R = random_generator(np.random.default_rng(5), 3)
        p = np.array([0.7, 0.2, 0.1])
        times = np.linspace(0.0, 3.0, 7)
        ode = solve_ivp(lambda t, q: R.T @ q, (0.0, 3.0), p, t_eval=times, rtol=1e-11, atol=1e-13)
        flow = belief_flow_batch(R, p, times)
        assert np.abs(flow - ode.y.T).max() < 1e-8
        assert np.allclose(belief_flow(R, p, 1.5), belief_flow_batch(R, p, [1.5])[0])

    @pytest.mark.dependency(depends=["TestBeliefFlow::test_flow_against_ode"])
    def test_invariant_measure(self, random_generator):
        R = random_generator(np.random.default_rng(6), 4)
        pi = invariant_measure(R)
        assert np.abs(R.T @ pi).max() < 1e-10
        assert pi.sum() == pytest.approx(1.0)
        assert np.allclose(belief_flow(R, [1.0, 0.0, 0.0, 0.0], 200.0), pi, atol=1e-9)

    @pytest.mark.dependency(depends=["TestBeliefFlow::test_flow_against_ode"])
    def test_reducible_chain(self):
        R = np.array([[0.0, 0.0], [1.0, -1.0]])
        assert not is_irreducible(R)
        with pytest.raises(ReducibleChainError):
            invariant_measure(R)
        assert is_irreducible([[-1.0, 1.0], [2.0, -2.0]])

    @pytest.mark.dependency(depends=["TestBeliefFlow::test_flow_against_ode"])
    def test_spectral_gap(self):
        assert spectral_gap([[-1.0, 1.0], [2.0, -2.0]]) == pytest.approx(3.0)
        assert spectral_gap([[0.0]]) == float('inf')


def test_semigroup_endogenous():
    """Action-indexed generators and their mixtures"""
    spec = from_document(endogenous_doc)
    semigroup = Semigroup(spec.rate)
    fast = semigroup.matrix(1.0, 0, 0)
    slow = semigroup.matrix(1.0, 1, 0)
    assert fast[0, 1] > slow[0, 1]
    mixed = semigroup.mixture(1.0, [0.25, 0.75], [1.0])
    assert np.allclose(mixed, 0.25 * fast + 0.75 * slow)
    with pytest.raises(ValueError, match="action pair"):
        semigroup.matrix(1.0)


def test_sample_path_sojourns():
    """Holding times in a state are exponential with the exit rate"""
    R = np.array([[-2.0, 2.0], [1.0, -1.0]])
    path = sample_path(R, 0, 2000.0, seed=11)
    sojourns = path.sojourn_times(0)
    assert len(sojourns) > 500
    assert sojourns.mean() == pytest.approx(0.5, rel=0.1)
    occupation = path.occupation_fraction(2)
    assert occupation.sum() == pytest.approx(1.0)
    assert occupation[0] == pytest.approx(1.0 / 3.0, abs=0.05)
    assert path.state_at(0.0) == 0
    with pytest.raises(ValueError):
        path.state_at(2001.0)


def test_simulate_chain_summary_reproducible():
    R = np.array([[-1.0, 1.0], [1.0, -1.0]])
    first = simulate_chain_summary(R, [0.5, 0.5], 5.0, 2500, seed=9)
    second = simulate_chain_summary(R, [0.5, 0.5], 5.0, 2500, seed=9)
    assert first.equals(second)
    assert list(first.columns) == ['path', 'initial_state', 'jumps', 'occupation_s1', 'occupation_s2']
    # expected jumps on [0, 5] at rate 1
    assert first['jumps'].mean() == pytest.approx(5.0, rel=0.05)
    assert np.allclose(first[['occupation_s1', 'occupation_s2']].sum(axis=1), 1.0)
    with pytest.raises(ValueError, match="Horizon"):
        simulate_chain_summary(R, [0.5, 0.5], 0.0, 10)

import pytest
from dataclasses import replace

import numpy as np

from src.analysis import lower_bound_fully_revealing, lower_bound_nonrevealing, upper_bound
from src.chain import belief_flow, transition
from src.envelope import BeliefGrid, ValueField
from src.game_model import from_document
from src.hj import Hamiltonian, solve_obstacle
from src.matrix_game import average_game_field
from src.process_sim import (
    BeliefProcess,
    BeliefTree,
    custom_process,
    deterministic_flow,
    dynamic_split,
    evaluate_p1,
    fully_revealing,
    martingale_consistency_check,
    play_game,
    static_split,
    two_state_optimal_process,
    verify_optimality_conditions,
)
from src.shapley_dp import DPConfig, optimal_policy, value_iteration
from tests.conftest import endogenous_doc


def random_tree(rng, belief, Pi, depth):
    """Two children e +/- a d around e = Pi^T q at every node, each with probability 1/2."""
    node = BeliefTree(belief)
    if depth == 0:
        return node
    expected = belief @ Pi
    direction = rng.normal(size=len(belief))
    direction -= direction.mean()
    direction /= np.abs(direction).max()
    a = rng.uniform(0.0, 0.5) * expected.min()
    for sign in (1.0, -1.0):
        node.children.append((0.5, random_tree(rng, expected + sign * a * direction, Pi, depth - 1)))
    return node


@pytest.fixture
def lemma_process():
    """Optimal process of the lemma configuration started at p = 0.2."""
    return two_state_optimal_process(1.0, 1.0, 1.0 / 3.0, 2.0 / 3.0, 0.2)


@pytest.fixture
def lemma_solution(lemma_u):
    return solve_obstacle(Hamiltonian(lemma_u), BeliefGrid(2, 300))


@pytest.mark.dependency()
class TestSplittings:
    """Finite splittings, one shot and along the chain."""

    @pytest.mark.dependency()
    def test_static_split(self):
        plan = static_split([0.5, 0.5], [0.5, 0.5], [[0.8, 0.2], [0.2, 0.8]], labels=['high', 'low'])
        assert plan.residual([0.5, 0.5]) <= 1e-12
        assert np.allclose(plan.conditional('high'), [0.8, 0.2])
        assert np.allclose(plan.label_marginal, [0.5, 0.5])
        assert static_split([0.3, 0.7], [1.0], [[0.3, 0.7]]).labels == ('l1',)
        with pytest.raises(ValueError, match="not the prior"):
            static_split([0.5, 0.5], [0.5, 0.5], [[0.9, 0.1], [0.2, 0.8]])
        with pytest.raises(ValueError, match="weights"):
            static_split([0.5, 0.5], [1.0], [[0.8, 0.2], [0.2, 0.8]])

    @pytest.mark.dependency(depends=["TestSplittings::test_static_split"])
    def test_dynamic_split_conditions(self, random_generator):
        rng = np.random.default_rng(31)
        for n_states in (2, 3, 2, 3):
            Pi = transition(random_generator(rng, n_states), 0.5)
            tree = random_tree(rng, rng.dirichlet(np.ones(n_states)), Pi, 3)
            splitting = dynamic_split(tree, Pi)
            assert tree.depth == 3
            c1, c2 = splitting.enumerate_conditions()
            assert c1 <= 1e-12
            assert c2 <= 1e-12
            assert not splitting.pruned
            kernel = splitting.composed_kernel((), 0)
            assert kernel.sum() == pytest.approx(1.0)

    @pytest.mark.dependency(depends=["TestSplittings::test_static_split"])
    def test_dynamic_split_prunes_unreachable_states(self):
        tree = BeliefTree([0.5, 0.5], [
            (0.5, BeliefTree([1.0, 0.0], [(1.0, BeliefTree([1.0, 0.0]))])),
            (0.5, BeliefTree([0.0, 1.0], [(1.0, BeliefTree([0.0, 1.0]))])),
        ])
        splitting = dynamic_split(tree, np.eye(2))
        assert splitting.pruned == [(0,), (1,)]
        assert max(splitting.enumerate_conditions()) <= 1e-12

    @pytest.mark.dependency(depends=["TestSplittings::test_static_split"])
    def test_dynamic_split_errors(self):
        Pi = np.array([[0.9, 0.1], [0.1, 0.9]])
        bad = BeliefTree([0.5, 0.5], [(0.5, BeliefTree([0.6, 0.4], [(1.0, BeliefTree([0.6, 0.4]))])),
                                      (0.5, BeliefTree([0.4, 0.6]))])
        with pytest.raises(ValueError, match="Martingale condition fails at root/0"):
            dynamic_split(bad, Pi)
        with pytest.raises(ValueError, match="row-stochastic"):
            dynamic_split(BeliefTree([0.5, 0.5]), [[0.5, 0.6], [0.1, 0.9]])
        with pytest.raises(ValueError, match="distribution"):
            dynamic_split(BeliefTree([0.5, 0.5], [(0.7, BeliefTree([0.5, 0.5]))]), Pi)


@pytest.mark.dependency()
class TestProcesses:
    """Belief processes and their P1 payoffs."""

    @pytest.mark.dependency()
    def test_two_state_optimal_construction(self, lemma_process):
        assert lemma_process.rho_tilde == pytest.approx((1.0, 1.0))
        assert lemma_process.theta == pytest.approx(np.log(1.8) / 2.0)
        assert np.allclose(lemma_process.switch_belief(), [1.0 / 3.0, 2.0 / 3.0])
        assert lemma_process.initial_law[0] == pytest.approx(1.0)

    @pytest.mark.dependency(depends=["TestProcesses::test_two_state_optimal_construction"])
    def test_mean_follows_the_flow(self, lemma_process):
        for t in (0.1, 0.5, 1.0, 3.0):
            expected = belief_flow(lemma_process.rate, lemma_process.p, t)
            assert np.allclose(lemma_process.expected_belief(t), expected, atol=1e-9)

    @pytest.mark.dependency(depends=["TestProcesses::test_two_state_optimal_construction"])
    def test_construction_errors(self, make_game):
        with pytest.raises(ValueError, match="p_inf"):
            two_state_optimal_process(1.0, 1.0, 0.5, 0.7, 0.2)
        with pytest.raises(ValueError, match="nonnegative"):
            two_state_optimal_process(-1.0, 1.0, 0.2, 0.7, 0.2)
        convex = make_game([[[1.0], [0.0]], [[0.0], [0.5]]])
        grid = BeliefGrid(2, 100)
        with pytest.raises(ValueError, match="differs from cav u"):
            two_state_optimal_process(1.0, 1.0, 0.3, 0.7, 0.1, u_field=average_game_field(convex, grid))
        with pytest.raises(ValueError, match="Unknown process recipe"):
            BeliefProcess('mixed', [[-1.0, 1.0], [1.0, -1.0]], [0.5, 0.5])
        with pytest.raises(ValueError, match="rows summing to zero"):
            custom_process([[-1.0, 1.0], [1.0, -1.0]], [0.5, 0.5], np.eye(2), [[-1.0, 0.5], [1.0, -1.0]], [0.5, 0.5])

    @pytest.mark.dependency(depends=["TestProcesses::test_two_state_optimal_construction"])
    def test_extension_check_accepts_linear_segment(self, lemma_u, lemma_process):
        field = ValueField(BeliefGrid(2, 300), lemma_u.values)
        checked = two_state_optimal_process(1.0, 1.0, 1.0 / 3.0, 2.0 / 3.0, 0.2, u_field=field)
        assert checked.theta == pytest.approx(lemma_process.theta)

    @pytest.mark.dependency(depends=["TestProcesses::test_two_state_optimal_construction"])
    def test_sample_shapes(self, lemma_process):
        sample = lemma_process.sample([0.1, 1.0, 2.0], 500, seed=3)
        assert sample.shape == (500, 3, 2)
        assert np.allclose(sample[:, 0], belief_flow(lemma_process.rate, lemma_process.p, 0.1))
        assert set(np.round(sample[:, 2, 0], 9)) <= {round(1.0 / 3.0, 9), round(2.0 / 3.0, 9)}

    @pytest.mark.dependency(depends=["TestProcesses::test_two_state_optimal_construction"])
    def test_deterministic_flow_payoff(self, example_spec):
        process = deterministic_flow(example_spec.rate.matrix, [0.3, 0.7])
        result = evaluate_p1(process, example_spec, example_spec.discount)
        assert result.half_width == 0.0
        assert result.estimate == pytest.approx(lower_bound_nonrevealing(example_spec, 0.3), abs=1e-4)

    @pytest.mark.dependency(depends=["TestProcesses::test_two_state_optimal_construction"])
    def test_fully_revealing_payoff(self, convex_u_spec):
        process = fully_revealing(convex_u_spec.rate.matrix, [0.3, 0.7])
        result = evaluate_p1(process, convex_u_spec, 1.0, paths=100_000, seed=5)
        expected = lower_bound_fully_revealing(convex_u_spec, 0.3)
        assert abs(result.estimate - expected) <= 2.0 * result.half_width + 1e-4
        assert result.flow_part == 0.0
        assert result.truncation_bound <= 1.01e-6

    @pytest.mark.dependency(depends=["TestProcesses::test_two_state_optimal_construction"])
    def test_lemma_process_attains_upper_bound(self, lemma_u, lemma_process):
        result = evaluate_p1(lemma_process, lemma_u, 1.0, paths=100_000, seed=7)
        bound = upper_bound(lemma_u, 0.2)
        assert abs(result.estimate - bound) <= max(2.0 * result.half_width, 2e-3)
        assert result.flow_part > 0.0
        with pytest.raises(ValueError, match="two paths"):
            evaluate_p1(lemma_process, lemma_u, 1.0, paths=1)


@pytest.mark.dependency()
class TestConsistencyChecks:
    """Martingale and optimality checks on simulated processes."""

    @pytest.mark.dependency()
    def test_martingale_check_passes(self, lemma_process):
        report = martingale_consistency_check(lemma_process, paths=20_000, seed=11, z=4.0)
        assert report.ok
        assert list(report.table.columns) == ['t', 'h', 'bin', 'count', 'mean', 'std_error', 'violation']
        assert len(report.table) == 12

    @pytest.mark.dependency(depends=["TestConsistencyChecks::test_martingale_check_passes"])
    def test_martingale_check_negative_control(self, lemma_process):
        """Halving the jump rates breaks E[p_{t+h} | p_t] = P_h^T p_t"""
        slowed = replace(lemma_process, generator=lemma_process.generator / 2.0)
        report = martingale_consistency_check(slowed, paths=20_000, seed=11, z=4.0)
        assert not report.ok
        assert report.table['violation'].any()

    @pytest.mark.dependency(depends=["TestConsistencyChecks::test_martingale_check_passes"])
    def test_optimality_conditions(self, lemma_process, lemma_solution):
        report = verify_optimality_conditions(lemma_process, lemma_solution)
        assert report.ok
        assert report.in_nonrevealing_set and report.chords_flat
        assert report.continuous_martingale_free
        assert report.worst_chord <= 2e-3

    @pytest.mark.dependency(depends=["TestConsistencyChecks::test_martingale_check_passes"])
    def test_optimality_conditions_reject_flow(self, lemma_process, lemma_solution):
        """The pure flow crosses the middle interval where the obstacle is active"""
        report = verify_optimality_conditions(deterministic_flow(lemma_process.rate, [0.2, 0.8]), lemma_solution)
        assert not report.ok
        assert not report.in_nonrevealing_set
        assert report.worst_membership_point is not None


@pytest.mark.dependency()
class TestPlay:
    """Simulated play of the game with stages of length 1/n."""

    @pytest.mark.dependency()
    def test_non_revealing(self, example_spec):
        result = play_game(example_spec, 32, 'non_revealing', paths=5000, seed=1)
        expected = lower_bound_nonrevealing(example_spec, 0.5)
        assert abs(result.estimate - expected) <= result.half_width + 2e-2
        assert result.zero_probability_updates == 0
        assert result.stages == 295
        assert result.tail_bound <= 1e-4 * example_spec.max_abs_payoff + 1e-15

    @pytest.mark.dependency(depends=["TestPlay::test_non_revealing"])
    def test_fully_revealing(self, convex_u_spec):
        result = play_game(convex_u_spec, 32, 'fully_revealing', paths=5000, seed=2)
        expected = lower_bound_fully_revealing(convex_u_spec, 0.5)
        assert abs(result.estimate - expected) <= result.half_width + 2e-2

    @pytest.mark.dependency(depends=["TestPlay::test_non_revealing"])
    def test_splitting_policy(self, example_spec):
        config = DPConfig(n=8, resolution=40, x_resolution=8)
        result = value_iteration(example_spec, config)
        policy = optimal_policy(example_spec, config, result.field)
        played = play_game(example_spec, 8, 'splitting_optimal', paths=5000, seed=3, policy=policy)
        assert played.estimate >= result.field.evaluate([0.5, 0.5]) - played.half_width - 5e-2

    @pytest.mark.dependency(depends=["TestPlay::test_non_revealing"])
    def test_errors(self, example_spec):
        with pytest.raises(ValueError, match="Unknown strategy"):
            play_game(example_spec, 8, 'bluff')
        with pytest.raises(ValueError, match="exogenous"):
            play_game(from_document(endogenous_doc), 8, 'non_revealing')
        with pytest.raises(ValueError, match="two paths"):
            play_game(example_spec, 8, 'non_revealing', paths=1)

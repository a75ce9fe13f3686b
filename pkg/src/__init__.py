"""
Asymgame - Zero-sum games where one player observes a Markov chain.

This package provides functionality to:
- Load, validate and hash game documents (one-sided, two-sided, abstract u)
- Solve matrix games and evaluate the non-revealing value u(p)
- Compute transition semigroups, belief flows and invariant measures
- Concavify functions of the belief on simplex grids
- Bound the limit value by integrals of u and cav u along the belief flow
- Solve the game played every 1/n by value iteration
- Solve the limit value as an obstacle problem (one-sided and two-sided)
- Build, simulate and check belief processes and simulate game play

Beliefs are probabilities over the hidden states; for two states a single
number p always means the probability of the first state.
"""

__version__ = "0.1.0"

from .game_model import (
    GameSpec,
    GameSpecTwoSided,
    AbstractU,
    load_spec,
    save_spec,
    validate,
    explicit_example,
    counterexample_u,
)
from .matrix_game import solve, average_game_value
from .chain import transition, belief_flow, invariant_measure
from .envelope import BeliefGrid, ValueField, cav, vex
from .analysis import upper_bound, lower_bound_nonrevealing, lower_bound_fully_revealing, sandwich_report
from .shapley_dp import DPConfig, solve_vn, value_iteration
from .hj import Hamiltonian, ObstacleConfig, solve_obstacle, solve_double_obstacle
from .process_sim import (
    deterministic_flow,
    fully_revealing,
    two_state_optimal_process,
    evaluate_p1,
    verify_optimality_conditions,
    static_split,
    dynamic_split,
    play_game,
)

__all__ = [
    'GameSpec',
    'GameSpecTwoSided',
    'AbstractU',
    'load_spec',
    'save_spec',
    'validate',
    'explicit_example',
    'counterexample_u',
    'solve',
    'average_game_value',
    'transition',
    'belief_flow',
    'invariant_measure',
    'BeliefGrid',
    'ValueField',
    'cav',
    'vex',
    'upper_bound',
    'lower_bound_nonrevealing',
    'lower_bound_fully_revealing',
    'sandwich_report',
    'DPConfig',
    'solve_vn',
    'value_iteration',
    'Hamiltonian',
    'ObstacleConfig',
    'solve_obstacle',
    'solve_double_obstacle',
    'deterministic_flow',
    'fully_revealing',
    'two_state_optimal_process',
    'evaluate_p1',
    'verify_optimality_conditions',
    'static_split',
    'dynamic_split',
    'play_game',
]

"""
Command Line Interface

One sub-command per solver. Every command writes its table as CSV (quoted
non-numeric fields, '.' decimals) and a run manifest next to it in
manifests/<stem>.manifest.json recording the command, the spec hash, every
parameter with its default filled in, the seed, the package version, the wall
clock and the files written.

Exit codes:
- 0: success
- 1: invalid input (unreadable or invalid spec, bad arguments)
- 2: a solver did not converge (the manifest still records its diagnostics)
"""

import argparse
import csv
import json
import logging
import pathlib
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from src import __version__
from src.analysis import closed_form_example, sandwich_report, split_interval
from src.chain import belief_flow_batch, invariant_measure, simulate_chain_summary
from src.envelope import BeliefGrid, ProductGrid, cav
from src.game_model import (
    AbstractU, GameSpec, GameSpecTwoSided, SpecValidationError, as_belief, explicit_example,
    from_document, load_spec, spec_hash, validate,
)
from src.hj import (
    DoubleObstacleConfig, Hamiltonian, ObstacleConfig, residual_check, solve_double_obstacle, solve_obstacle,
)
from src.matrix_game import average_game, average_game_field, solve
from src.process_sim import (
    deterministic_flow, evaluate_p1, fully_revealing, play_game, two_state_optimal_process,
    verify_optimality_conditions,
)
from src.shapley_dp import DPConfig, convergence_study, optimal_policy, value_iteration
from src.utils import ConvergenceError, create_output_directories, set_thread_count, setup_logging

logger = logging.getLogger(__name__)

DEFAULT_SEED = 42
EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NOT_CONVERGED = 2


@dataclass
class RunManifest:
    """Everything needed to rerun a command and get the same CSV bytes."""
    command: str
    spec_hash: str = None
    parameters: dict = field(default_factory=dict)
    seed: int = None
    version: str = __version__
    wall_clock_seconds: float = 0.0
    outputs: list = field(default_factory=list)
    status: str = 'ok'
    diagnostics: dict = field(default_factory=dict)

    def write(self, directory, stem):
        path = pathlib.Path(directory) / "manifests" / f"{stem}.manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True, default=_json_default)
        logger.info(f"Manifest written to {path}")
        return path


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


def write_table(frame, path):
    """Write a table as CSV; identical frames give identical bytes."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, quoting=csv.QUOTE_NONNUMERIC, lineterminator='\n')
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def _float_list(text):
    try:
        return [float(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected comma-separated numbers, got '{text}'")


def _int_list(text):
    try:
        return [int(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected comma-separated integers, got '{text}'")


def _product_resolution(text):
    parts = text.lower().split('x')
    try:
        if len(parts) == 1:
            return int(parts[0]), int(parts[0])
        if len(parts) == 2:
            return int(parts[0]), int(parts[1])
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"Expected a resolution like 200 or 200x100, got '{text}'")


def _belief_arg(text, spec):
    values = _float_list(text)
    if len(values) == 1 and spec.n_states == 2:
        values = [values[0], 1.0 - values[0]]
    return as_belief(values, spec.n_states)


def _default_belief(spec):
    if spec.initial_belief is None:
        return np.full(spec.n_states, 1.0 / spec.n_states)
    return np.asarray(spec.initial_belief)


def _require(spec, kinds, command):
    if not isinstance(spec, kinds):
        names = ' or '.join(kind.__name__ for kind in kinds)
        raise ValueError(f"'{command}' needs a {names}, got {type(spec).__name__}")


# ---------------------------------------------------------------------------
# Commands: each returns (frame, parameters, extra tables)
# ---------------------------------------------------------------------------

def cmd_value(args, spec):
    _require(spec, (GameSpec,), 'value')
    p = _belief_arg(args.belief, spec) if args.belief else _default_belief(spec)
    solution = solve(average_game(spec, p))
    row = {f"p_{label}": q for label, q in zip(spec.states, p)}
    row['value'] = solution.value
    row.update({f"x_{label}": x for label, x in zip(spec.actions1, solution.x_star)})
    row.update({f"y_{label}": y for label, y in zip(spec.actions2, solution.y_star)})
    print(f"u(p) = {solution.value:.10g}")
    return pd.DataFrame([row]), {'belief': p.tolist()}


def cmd_flow(args, spec):
    _require(spec, (GameSpec, AbstractU), 'flow')
    if isinstance(spec, AbstractU):
        spec.require_dynamics()
    elif not spec.is_exogenous:
        raise ValueError("'flow' needs an exogenous generator")
    p = _belief_arg(args.belief, spec) if args.belief else _default_belief(spec)
    flow = belief_flow_batch(spec.rate.matrix, p, args.t)
    frame = pd.DataFrame(flow, columns=[f"p_{label}" for label in spec.states])
    frame.insert(0, 't', args.t)
    print(frame.to_csv(index=False), end='')
    return frame, {'belief': p.tolist(), 't': args.t}


def cmd_simulate_chain(args, spec):
    _require(spec, (GameSpec, AbstractU), 'simulate-chain')
    p = _belief_arg(args.belief, spec) if args.belief else _default_belief(spec)
    frame = simulate_chain_summary(spec.rate.matrix, p, args.horizon, args.paths, args.seed, spec.states)
    return frame, {'belief': p.tolist(), 'horizon': args.horizon, 'paths': args.paths}


def cmd_cav(args, spec):
    _require(spec, (GameSpec, AbstractU), 'cav')
    resolution = args.resolution or (spec.grid_resolution if isinstance(spec, AbstractU) else 200)
    u = average_game_field(spec, BeliefGrid(spec.n_states, resolution))
    frame = u.to_frame(list(spec.states), name='u')
    frame['cav_u'] = cav(u).values
    return frame, {'resolution': resolution}


def cmd_bounds(args, spec):
    _require(spec, (GameSpec, AbstractU), 'bounds')
    resolution = args.resolution or (spec.grid_resolution if isinstance(spec, AbstractU) else 200)
    grid = BeliefGrid(spec.n_states, args.points)
    frame = sandwich_report(spec, grid, resolution=resolution, tol=args.tol)
    return frame, {'resolution': resolution, 'points': args.points, 'tol': args.tol}


def _dp_config(args):
    return DPConfig(n=args.n, resolution=args.grid, x_resolution=args.xgrid, tol=args.tol,
                    max_iterations=args.max_iterations)


def cmd_dp(args, spec):
    _require(spec, (GameSpec,), 'dp')
    config = _dp_config(args)
    result = value_iteration(spec, config)
    frame = result.field.to_frame(list(spec.states), name='v_n')
    params = asdict(config)
    params.update({'iterations': result.iterations, 'residual': result.residual,
                   'lambda_n': result.lambda_n, 'clamped': result.clamped,
                   'concave': bool(result.concavity.ok)})
    return frame, params


def cmd_hj(args, spec):
    _require(spec, (GameSpec, AbstractU), 'hj')
    H = Hamiltonian(spec)
    config = ObstacleConfig(resolution=args.grid, cfl=args.cfl, tol=args.tol, max_iterations=args.max_iterations)
    solution = solve_obstacle(H, config=config)
    frame = solution.to_frame(list(spec.states))
    report = residual_check(solution, H)
    params = asdict(config)
    params.update({'iterations': solution.iterations, 'residual': solution.residual, 'dtau': solution.dtau,
                   'residual_check_ok': report.ok, 'worst_pde_residual': report.worst_pde})
    return frame, params


def cmd_hj2(args, spec):
    _require(spec, (GameSpecTwoSided,), 'hj2')
    m1, m2 = args.grid
    config = DoubleObstacleConfig(resolution1=m1, resolution2=m2, cfl=args.cfl, tol=args.tol,
                                  max_iterations=args.max_iterations)
    solution = solve_double_obstacle(Hamiltonian(spec), ProductGrid(m1, m2), config)
    params = asdict(config)
    params.update({'iterations': solution.iterations, 'residual': solution.residual,
                   'concavity_violation': solution.concavity_violation,
                   'convexity_violation': solution.convexity_violation})
    return solution.to_frame(), params


PROCESS_CHOICES = ('two-state-optimal', 'deterministic-flow', 'fully-revealing')


def _build_process(args, spec, p):
    R = spec.rate.matrix
    if args.process == 'deterministic-flow':
        return deterministic_flow(R, p), {}
    if args.process == 'fully-revealing':
        return fully_revealing(R, p), {}
    if spec.n_states != 2:
        raise ValueError("The two-state optimal process needs two states")
    u = average_game_field(spec, BeliefGrid(2, args.grid))
    p_inf = float(invariant_measure(R)[0])
    if args.split:
        p_lo, p_hi = args.split
    else:
        p_lo, p_hi = split_interval(cav(u), u, p_inf)
    process = two_state_optimal_process(R[0, 1], R[1, 0], p_lo, p_hi, p, u_field=u)
    return process, {'p_lo': p_lo, 'p_hi': p_hi, 'p_inf': p_inf}


def cmd_simulate(args, spec):
    _require(spec, (GameSpec, AbstractU), 'simulate')
    p = _belief_arg(args.belief, spec) if args.belief else _default_belief(spec)
    process, params = _build_process(args, spec, p)
    u = average_game_field(spec, BeliefGrid(spec.n_states, args.grid))
    estimate = evaluate_p1(process, u, spec.discount, paths=args.paths, seed=args.seed)
    row = {f"p_{label}": q for label, q in zip(spec.states, p)}
    row.update({'process': args.process, 'estimate': estimate.estimate, 'half_width': estimate.half_width,
                'paths': estimate.paths, 'flow_part': estimate.flow_part,
                'truncation_bound': estimate.truncation_bound})
    if args.verify:
        solution = solve_obstacle(Hamiltonian(spec), config=ObstacleConfig(resolution=args.grid))
        report = verify_optimality_conditions(process, solution)
        row.update({'optimality_ok': report.ok, 'worst_chord': report.worst_chord,
                    'in_nonrevealing_set': report.in_nonrevealing_set})
    params.update({'belief': p.tolist(), 'process': args.process, 'paths': args.paths, 'grid': args.grid,
                   'verify': args.verify})
    return pd.DataFrame([row]), params


STRATEGY_CHOICES = {'splitting': 'splitting_optimal', 'non-revealing': 'non_revealing',
                    'fully-revealing': 'fully_revealing'}


def cmd_play(args, spec):
    _require(spec, (GameSpec,), 'play')
    strategy = STRATEGY_CHOICES[args.strategy]
    policy = None
    if strategy == 'splitting_optimal':
        policy = optimal_policy(spec, DPConfig(n=args.n, resolution=args.grid, x_resolution=args.xgrid))
    result = play_game(spec, args.n, strategy, stages=args.stages, paths=args.paths, seed=args.seed,
                       policy=policy)
    frame = pd.DataFrame([{'n': args.n, 'strategy': strategy, **result._asdict()}])
    params = {'n': args.n, 'strategy': strategy, 'stages': result.stages, 'paths': args.paths,
              'grid': args.grid, 'xgrid': args.xgrid}
    return frame, params


def _convergence(spec, n_list, config, closed_form=None, reference=None):
    return convergence_study(spec, n_list, config, reference=reference, closed_form=closed_form)


def cmd_convergence(args, spec):
    _require(spec, (GameSpec,), 'convergence')
    config = DPConfig(n=args.n[0], resolution=args.grid, x_resolution=args.xgrid, tol=args.tol)
    frame = _convergence(spec, args.n, config)
    params = asdict(config)
    params['n_list'] = args.n
    return frame, params


def cmd_repro_example(args, spec):
    """dp at several n, hj, the bounds and the closed form for the switching example."""
    spec = explicit_example(r=args.r, pi=args.pi)
    H = Hamiltonian(spec)
    solution = solve_obstacle(H, config=ObstacleConfig(resolution=args.grid))

    def closed_form(points):
        return np.array([closed_form_example(q, args.r, args.pi) for q in np.asarray(points)[:, 0]])

    config = DPConfig(n=args.n[0], resolution=args.dp_grid, x_resolution=args.xgrid, tol=args.tol)
    convergence = _convergence(spec, args.n, config, closed_form=closed_form, reference=solution.field)

    grid = BeliefGrid(2, args.points)
    points = np.asarray(grid.points)
    frame = pd.DataFrame({'p_s1': points[:, 0]})
    frame['closed_form'] = closed_form(points)
    frame['hj'] = solution.evaluate(points)
    for n in args.n:
        run = value_iteration(spec, DPConfig(n=n, resolution=args.dp_grid, x_resolution=args.xgrid, tol=args.tol))
        frame[f"dp_n{n}"] = run.field.evaluate(points)
    bounds = sandwich_report(spec, grid, resolution=args.dp_grid)
    frame['lower'] = bounds['lower'].to_numpy()
    frame['upper'] = bounds['upper'].to_numpy()

    error = float(np.abs(frame['hj'] - frame['closed_form']).max())
    print(f"hj vs closed form: sup error {error:.3e}")
    params = {'r': args.r, 'pi': args.pi, 'grid': args.grid, 'dp_grid': args.dp_grid, 'xgrid': args.xgrid,
              'n_list': args.n, 'tol': args.tol, 'points': args.points, 'hj_closed_form_error': error}
    return frame, params, {'convergence': convergence}


COMMANDS = {
    'value': cmd_value,
    'flow': cmd_flow,
    'cav': cmd_cav,
    'bounds': cmd_bounds,
    'dp': cmd_dp,
    'hj': cmd_hj,
    'hj2': cmd_hj2,
    'simulate': cmd_simulate,
    'simulate-chain': cmd_simulate_chain,
    'play': cmd_play,
    'convergence': cmd_convergence,
    'repro-example': cmd_repro_example,
}


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so run() owns the exit code."""

    def error(self, message):
        raise ValueError(message)


def build_parser():
    parser = _Parser(prog='asymgame', description='Solve zero-sum games with asymmetric information on a Markov chain')
    parser.add_argument('--debug', action='store_true', help='Enable debug logging')
    parser.add_argument('--threads', type=int, default=None,
                        help='Worker threads (defaults to ASYMGAME_THREADS, else 1)')
    parser.add_argument('--output', type=str, default='output', help='Output directory')
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)
    sub.required = True

    def command(name, help_text, out, needs_spec=True):
        p = sub.add_parser(name, help=help_text)
        if needs_spec:
            p.add_argument('spec', help='Path to the JSON game document')
        p.add_argument('--out', type=str, default=out, help='CSV file name (relative to --output)')
        return p

    p = sub.add_parser('validate', help='List invariant violations of a game document')
    p.add_argument('spec', help='Path to the JSON game document')

    p = command('value', 'Value and optimal strategies of the average game', 'value.csv')
    p.add_argument('--belief', type=str, default=None, help='Belief, e.g. 0.3 or 0.2,0.3,0.5')

    p = command('flow', 'Belief flow p*_t', 'flow.csv')
    p.add_argument('--t', type=_float_list, default=[0.0, 0.5, 1.0, 2.0], help='Comma-separated times')
    p.add_argument('--belief', type=str, default=None)

    p = command('simulate-chain', 'Jump counts and occupation fractions of chain paths', 'chain.csv')
    p.add_argument('--horizon', type=float, default=10.0)
    p.add_argument('--paths', type=int, default=1000)
    p.add_argument('--seed', type=int, default=DEFAULT_SEED)
    p.add_argument('--belief', type=str, default=None)

    p = command('cav', 'u and cav u on a belief grid', 'cav.csv')
    p.add_argument('--resolution', type=int, default=None)

    p = command('bounds', 'Lower and upper bounds along the belief flow', 'bounds.csv')
    p.add_argument('--resolution', type=int, default=None, help='Resolution of the u tables')
    p.add_argument('--points', type=int, default=20, help='Resolution of the reported beliefs')
    p.add_argument('--tol', type=float, default=1e-8)

    p = command('dp', 'Value iteration for the game played every 1/n', 'vn.csv')
    p.add_argument('--n', type=int, default=32)
    p.add_argument('--grid', type=int, default=200)
    p.add_argument('--xgrid', type=int, default=40)
    p.add_argument('--tol', type=float, default=1e-6)
    p.add_argument('--max-iterations', dest='max_iterations', type=int, default=None)

    p = command('hj', 'Limit value from the obstacle equation', 'v.csv')
    p.add_argument('--grid', type=int, default=200)
    p.add_argument('--cfl', type=float, default=0.4)
    p.add_argument('--tol', type=float, default=1e-8)
    p.add_argument('--max-iterations', dest='max_iterations', type=int, default=None)

    p = command('hj2', 'Limit value of a two-sided game', 'v2.csv')
    p.add_argument('--grid', type=_product_resolution, default=(100, 100), help='m or m1xm2')
    p.add_argument('--cfl', type=float, default=0.4)
    p.add_argument('--tol', type=float, default=1e-7)
    p.add_argument('--max-iterations', dest='max_iterations', type=int, default=None)

    p = command('simulate', 'Monte Carlo payoff of a belief process', 'simulate.csv')
    p.add_argument('--process', choices=PROCESS_CHOICES, default='two-state-optimal')
    p.add_argument('--paths', type=int, default=10_000)
    p.add_argument('--seed', type=int, default=DEFAULT_SEED)
    p.add_argument('--grid', type=int, default=300)
    p.add_argument('--belief', type=str, default=None)
    p.add_argument('--split', type=_float_list, default=None, help='p_lo,p_hi (located from cav u if omitted)')
    p.add_argument('--verify', action='store_true', help='Also check the optimality conditions')

    p = command('play', 'Simulate the game played every 1/n', 'play.csv')
    p.add_argument('--n', type=int, default=32)
    p.add_argument('--strategy', choices=list(STRATEGY_CHOICES), default='splitting')
    p.add_argument('--paths', type=int, default=20_000)
    p.add_argument('--stages', type=int, default=None)
    p.add_argument('--seed', type=int, default=DEFAULT_SEED)
    p.add_argument('--grid', type=int, default=200)
    p.add_argument('--xgrid', type=int, default=40)

    p = command('convergence', 'Distance of v_n to the limit value as n grows', 'convergence.csv')
    p.add_argument('--n', type=_int_list, default=[8, 16, 32, 64])
    p.add_argument('--grid', type=int, default=200)
    p.add_argument('--xgrid', type=int, default=40)
    p.add_argument('--tol', type=float, default=1e-6)

    p = command('repro-example', 'Closed-form switching example against every solver', 'repro_example.csv',
                needs_spec=False)
    p.add_argument('--r', type=float, default=1.0)
    p.add_argument('--pi', type=float, default=1.0)
    p.add_argument('--grid', type=int, default=1000, help='Obstacle solver resolution')
    p.add_argument('--dp-grid', dest='dp_grid', type=int, default=200)
    p.add_argument('--xgrid', type=int, default=40)
    p.add_argument('--n', type=_int_list, default=[8, 16, 32, 64])
    p.add_argument('--tol', type=float, default=1e-6)
    p.add_argument('--points', type=int, default=20)
    return parser


def _run_validate(args):
    path = pathlib.Path(args.spec)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    try:
        with open(path, encoding='utf-8') as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        print(f"document: not valid JSON ({e})")
        return EXIT_INVALID
    violations = validate(document)
    for violation in violations:
        print(str(violation))
    if violations:
        logger.error(f"{path} has {len(violations)} violations")
        return EXIT_INVALID
    print(f"{path}: valid ({type(from_document(document)).__name__})")
    return EXIT_OK


def _parameters(args):
    params = {key: value for key, value in vars(args).items() if key not in ('debug', 'output')}
    return json.loads(json.dumps(params, default=_json_default))


def run(argv=None):
    """
    Execute one command.

    Args:
        argv (list): Arguments without the program name; defaults to sys.argv[1:]

    Returns:
        int: 0 on success, 1 on invalid input, 2 on solver non-convergence
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ValueError as e:
        print(f"asymgame: {e}", file=sys.stderr)
        return EXIT_INVALID

    setup_logging(debug=args.debug)
    try:
        set_thread_count(args.threads)
    except ValueError as e:
        logger.error(str(e))
        return EXIT_INVALID
    logger.info(f"Running '{args.command}'")

    if args.command == 'validate':
        try:
            return _run_validate(args)
        except FileNotFoundError as e:
            logger.error(str(e))
            return EXIT_INVALID

    dirs = create_output_directories(args.output)
    out_path = pathlib.Path(args.out)
    if not out_path.is_absolute():
        out_path = dirs['tables'] / out_path
    manifest = RunManifest(command=args.command, parameters=_parameters(args), seed=getattr(args, 'seed', None))
    start = time.perf_counter()
    status = EXIT_OK
    try:
        spec = load_spec(args.spec) if hasattr(args, 'spec') else explicit_example(args.r, args.pi)
        manifest.spec_hash = spec_hash(spec)
        result = COMMANDS[args.command](args, spec)
        frame, params = result[0], result[1]
        extra = result[2] if len(result) > 2 else {}
        manifest.parameters.update(json.loads(json.dumps(params, default=_json_default)))
        manifest.outputs.append(str(write_table(frame, out_path)))
        for name, table in extra.items():
            extra_path = out_path.with_name(f"{out_path.stem}_{name}.csv")
            manifest.outputs.append(str(write_table(table, extra_path)))
    except ConvergenceError as e:
        logger.error(f"Solver did not converge: {str(e)}")
        manifest.status = 'not_converged'
        manifest.diagnostics = {'message': str(e), 'iterations': e.iterations, 'residual': e.residual,
                                **e.diagnostics}
        status = EXIT_NOT_CONVERGED
    except (SpecValidationError, FileNotFoundError, ValueError, TypeError) as e:
        logger.error(f"Invalid input: {str(e)}")
        manifest.status = 'invalid'
        manifest.diagnostics = {'message': str(e)}
        if isinstance(e, SpecValidationError):
            manifest.diagnostics['violations'] = [str(v) for v in e.violations]
        status = EXIT_INVALID
    manifest.wall_clock_seconds = round(time.perf_counter() - start, 3)
    manifest.write(out_path.parent, out_path.stem)
    return status


def main():
    """Console entry point."""
    sys.exit(run())


if __name__ == '__main__':
    main()

import pytest
import json
import pathlib

import pandas as pd

from src.cli import EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_OK, run
from tests.conftest import explicit_example_doc

DATA_DIR = pathlib.Path(__file__).resolve().parent.parent / 'data'
EXAMPLE = str(DATA_DIR / 'explicit_example.json')


@pytest.fixture(autouse=True)
def log_file(tmp_path, monkeypatch):
    monkeypatch.setenv('LOG_FILE', str(tmp_path / 'logs' / 'debug.log'))


def read_manifest(out, stem):
    with open(pathlib.Path(out) / 'manifests' / f"{stem}.manifest.json", encoding='utf-8') as f:
        return json.load(f)


@pytest.mark.dependency()
class TestCommands:
    """Commands writing a table and its manifest."""

    @pytest.mark.dependency()
    def test_value(self, tmp_path):
        out = tmp_path / 'out'
        assert run(['--output', str(out), 'value', EXAMPLE, '--belief', '0.5']) == EXIT_OK
        frame = pd.read_csv(out / 'value.csv')
        assert frame['value'].iloc[0] == pytest.approx(0.25, abs=1e-9)
        manifest = read_manifest(out, 'value')
        assert manifest['status'] == 'ok'
        assert manifest['command'] == 'value'
        assert len(manifest['spec_hash']) == 64
        assert manifest['parameters']['belief'] == [0.5, 0.5]
        assert manifest['outputs'] == [str(out / 'value.csv')]

    @pytest.mark.dependency(depends=["TestCommands::test_value"])
    def test_reruns_are_byte_identical(self, tmp_path):
        first, second = tmp_path / 'first', tmp_path / 'second'
        args = ['simulate-chain', EXAMPLE, '--horizon', '5', '--paths', '200', '--seed', '9']
        assert run(['--output', str(first)] + args) == EXIT_OK
        assert run(['--output', str(second)] + args) == EXIT_OK
        assert (first / 'chain.csv').read_bytes() == (second / 'chain.csv').read_bytes()
        assert read_manifest(first, 'chain')['seed'] == 9

    @pytest.mark.dependency(depends=["TestCommands::test_value"])
    def test_solvers(self, tmp_path):
        out = tmp_path / 'out'
        assert run(['--output', str(out), 'hj', EXAMPLE, '--grid', '50']) == EXIT_OK
        hj = pd.read_csv(out / 'v.csv')
        assert list(hj.columns) == ['p_s1', 'p_s2', 'value', 'tag']
        assert len(hj) == 51
        assert run(['--output', str(out), 'bounds', EXAMPLE, '--points', '4', '--resolution', '50']) == EXIT_OK
        bounds = pd.read_csv(out / 'bounds.csv')
        assert bounds['sandwich_ok'].all()
        assert run(['--output', str(out), 'play', EXAMPLE, '--n', '8', '--strategy', 'non-revealing',
                    '--paths', '200']) == EXIT_OK
        assert read_manifest(out, 'play')['parameters']['strategy'] == 'non_revealing'

    @pytest.mark.dependency(depends=["TestCommands::test_value"])
    def test_repro_example(self, tmp_path):
        out = tmp_path / 'out'
        code = run(['--output', str(out), 'repro-example', '--grid', '100', '--dp-grid', '20', '--xgrid', '4',
                    '--n', '4,8', '--points', '5'])
        assert code == EXIT_OK
        frame = pd.read_csv(out / 'repro_example.csv')
        assert {'closed_form', 'hj', 'dp_n4', 'dp_n8', 'lower', 'upper'} <= set(frame.columns)
        assert (out / 'repro_example_convergence.csv').exists()
        assert len(read_manifest(out, 'repro_example')['outputs']) == 2


@pytest.mark.dependency()
class TestExitCodes:
    """Invalid input exits with 1, non-convergence with 2."""

    @pytest.mark.dependency()
    def test_validate(self, tmp_path, write_doc):
        assert run(['validate', EXAMPLE]) == EXIT_OK
        bad = dict(explicit_example_doc, discount=-1.0, initial_belief=[0.7, 0.7])
        assert run(['validate', str(write_doc(bad))]) == EXIT_INVALID
        assert run(['validate', str(tmp_path / 'missing.json')]) == EXIT_INVALID

    @pytest.mark.dependency(depends=["TestExitCodes::test_validate"])
    def test_invalid_input(self, tmp_path, write_doc):
        out = tmp_path / 'out'
        assert run(['--output', str(out), 'frobnicate']) == EXIT_INVALID
        assert run(['--output', str(out), 'value', str(tmp_path / 'missing.json')]) == EXIT_INVALID
        bad = dict(explicit_example_doc, discount=-1.0)
        assert run(['--output', str(out), 'dp', str(write_doc(bad))]) == EXIT_INVALID
        manifest = read_manifest(out, 'vn')
        assert manifest['status'] == 'invalid'
        assert manifest['diagnostics']['violations']
        assert run(['--output', str(out), 'hj2', EXAMPLE]) == EXIT_INVALID

    @pytest.mark.dependency(depends=["TestExitCodes::test_validate"])
    def test_not_converged(self, tmp_path):
        out = tmp_path / 'out'
        code = run(['--output', str(out), 'dp', EXAMPLE, '--n', '8', '--grid', '20', '--xgrid', '4',
                    '--max-iterations', '2'])
        assert code == EXIT_NOT_CONVERGED
        manifest = read_manifest(out, 'vn')
        assert manifest['status'] == 'not_converged'
        assert manifest['diagnostics']['iterations'] == 2
        assert not (out / 'vn.csv').exists()

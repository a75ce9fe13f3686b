import pytest
import os
import logging
import threading

from src.utils import (
    ConvergenceError,
    create_output_directories,
    get_thread_count,
    parallel_map,
    resolve_threads,
    set_thread_count,
)


@pytest.mark.dependency()
class TestDirectoryOperations:
    """Test suite for directory operations.

    Verifies directory creation and validation functionality.
    """

    @pytest.mark.dependency()
    def test_create_output_directories(self, tmp_path):
        """Test output directory creation.

        Verifies:
        - Base output directory creation
        - Manifests subdirectory creation
        - String path handling
        """
        output_dir = tmp_path / "output"
        dirs = create_output_directories(output_dir)
        assert os.path.exists(output_dir)
        assert os.path.exists(output_dir / "manifests")
        assert dirs['manifests'] == output_dir / "manifests"

        str_output_dir = str(tmp_path / "output2")
        create_output_directories(str_output_dir)
        assert os.path.exists(os.path.join(str_output_dir, "manifests"))


@pytest.mark.dependency()
class TestThreads:
    """Worker count resolution and the ordered parallel map."""

    @pytest.mark.dependency()
    def test_resolve_threads(self, monkeypatch):
        monkeypatch.delenv('ASYMGAME_THREADS', raising=False)
        assert resolve_threads() == 1
        assert resolve_threads(3) == 3
        monkeypatch.setenv('ASYMGAME_THREADS', '4')
        assert resolve_threads() == 4
        assert resolve_threads(2) == 2

    @pytest.mark.dependency(depends=["TestThreads::test_resolve_threads"])
    def test_invalid_threads(self, monkeypatch):
        with pytest.raises(ValueError, match="positive integer"):
            resolve_threads(0)
        monkeypatch.setenv('ASYMGAME_THREADS', 'many')
        with pytest.raises(ValueError, match="ASYMGAME_THREADS"):
            resolve_threads()

    @pytest.mark.dependency(depends=["TestThreads::test_resolve_threads"])
    def test_parallel_map_preserves_order(self, monkeypatch):
        monkeypatch.delenv('ASYMGAME_THREADS', raising=False)
        items = list(range(50))
        assert parallel_map(lambda x: x * x, items, threads=4) == [x * x for x in items]
        assert parallel_map(lambda x: x + 1, items, threads=1) == [x + 1 for x in items]

    @pytest.mark.dependency(depends=["TestThreads::test_resolve_threads"])
    def test_single_thread_runs_inline(self):
        set_thread_count(1)
        try:
            names = parallel_map(lambda _: threading.current_thread().name, range(5))
            assert set(names) == {threading.current_thread().name}
            assert get_thread_count() == 1
        finally:
            set_thread_count(1)


def test_convergence_error_carries_diagnostics():
    """Solver failures keep their iteration count, residual and details"""
    error = ConvergenceError("did not converge", iterations=12, residual=0.5, diagnostics={'n': 8})
    assert isinstance(error, RuntimeError)
    assert error.iterations == 12
    assert error.residual == 0.5
    assert error.diagnostics == {'n': 8}
    assert str(error) == "did not converge"


def test_setup_logging(tmp_path, monkeypatch):
    """Test logging setup"""
    log_file = tmp_path / 'logs' / 'test.log'
    monkeypatch.setenv('LOG_FILE', str(log_file))

    # Reset logging configuration
    for handler in logging.root.handlers[:]:
        logging.root.removeHandler(handler)

    from src.utils import setup_logging

    assert setup_logging(log_level='info') == str(log_file)
    assert log_file.exists()
    assert logging.getLogger().level == logging.INFO

    for handler in logging.root.handlers[:]:
        handler.close()
        logging.root.removeHandler(handler)

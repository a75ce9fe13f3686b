"""
Utility functions for the game solvers.

This module contains helpers shared by every solver module but not tied to
any piece of game theory: logging setup, output directories, the worker
pool used for embarrassingly parallel loops, and the solver failure type.
"""

import os
import pathlib
import logging
from concurrent.futures import ThreadPoolExecutor

logger = logging.getLogger(__name__)

THREADS_ENV_VAR = 'ASYMGAME_THREADS'

_thread_count = None


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver stops before meeting its tolerance.

    Attributes:
        iterations (int): Iterations performed before giving up
        residual (float): Last sup-norm change (or other residual measure)
        diagnostics (dict): Solver specific details for the run manifest
    """

    def __init__(self, message, iterations=0, residual=float('nan'), diagnostics=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.diagnostics = dict(diagnostics or {})


def setup_logging(debug=False, log_level='info'):
    """Configure logging for the application."""
    if debug:
        level = logging.DEBUG
    else:
        level = getattr(logging, log_level.upper(), logging.INFO)

    format = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    # Get log file path from environment or use default
    log_file = os.getenv('LOG_FILE', 'debug.log')

    log_dir = os.path.dirname(log_file)
    if log_dir and not os.path.exists(log_dir):
        os.makedirs(log_dir, exist_ok=True)

    logging.basicConfig(
        level=level,
        format=format,
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ]
    )

    return log_file


def create_output_directories(output_dir):
    """
    Create the artifact layout used by the command-line runs.

    Args:
        output_dir (str or pathlib.Path): Base directory for CSV tables

    Returns:
        dict: Paths keyed by 'tables' and 'manifests'

    Side Effects:
        - Creates output_dir if it doesn't exist
        - Creates the manifests subdirectory
    """
    logger.info(f"Creating output directories in {output_dir}")

    output_dir = pathlib.Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    manifests = output_dir / "manifests"
    manifests.mkdir(exist_ok=True)
    return {'tables': output_dir, 'manifests': manifests}


def resolve_threads(threads=None):
    """Work out how many worker threads a run may use.

    An explicit positive value wins; otherwise the ASYMGAME_THREADS
    environment variable is consulted; otherwise one thread.

    Raises:
        ValueError: If the explicit value or the environment value is not a
            positive integer
    """
    if threads is not None:
        if int(threads) < 1:
            raise ValueError(f"Thread count must be a positive integer, got {threads}")
        return int(threads)

    raw = os.getenv(THREADS_ENV_VAR)
    if raw is None or raw.strip() == '':
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV_VAR} must be a positive integer, got '{raw}'")
    if value < 1:
        raise ValueError(f"{THREADS_ENV_VAR} must be a positive integer, got '{raw}'")
    return value


def set_thread_count(threads):
    """Set the process-wide worker cap used by parallel_map."""
    global _thread_count
    _thread_count = resolve_threads(threads)
    logger.debug(f"Worker threads set to {_thread_count}")
    return _thread_count


def get_thread_count():
    if _thread_count is None:
        return resolve_threads()
    return _thread_count


def parallel_map(func, items, threads=None):
    """Apply func to every item, preserving order.

    Runs sequentially when a single thread is configured so that runs stay
    trivially reproducible; callers must not rely on shared mutable state
    either way.
    """
    items = list(items)
    workers = resolve_threads(threads) if threads is not None else get_thread_count()
    if workers == 1 or len(items) < 2:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(func, items))

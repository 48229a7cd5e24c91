"""Logging, configuration files, the worker pool and run statistics."""

import logging
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from datetime import datetime
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, TypeVar

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

T = TypeVar('T')

THREADS_ENV = 'HOMOG_THREADS'
DEFAULT_MAX_WORKERS = 4


def setup_logging(level: str = 'INFO'):
    """
    Set up logging configuration.

    Args:
        level: Logging level
    """
    log_format = '%(asctime)s | %(name)s | %(levelname)s | %(message)s'
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=log_format,
        datefmt='%Y-%m-%d %H:%M:%S'
    )


def load_config(config_path: str = 'config.yaml') -> Dict:
    """
    Load a run configuration from a YAML (or JSON) file.

    Args:
        config_path: Path to configuration file

    Returns:
        Configuration dictionary
    """
    import yaml

    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            config = yaml.safe_load(f)
        logger.debug(f"Loaded configuration from {config_path}")
        return config
    except Exception as e:
        logger.error(f"Failed to load configuration: {e}")
        raise


def ensure_directories(*paths):
    """Ensure directories exist."""
    for path in paths:
        Path(path).mkdir(parents=True, exist_ok=True)


def resolve_workers(configured: Optional[int] = None) -> int:
    """
    Worker count for slice and cell solves.

    The config value wins over the default of min(4, cpu count); the
    HOMOG_THREADS environment variable (also read from .env) caps either.
    """
    load_dotenv()
    workers = configured if configured else min(DEFAULT_MAX_WORKERS, os.cpu_count() or 1)
    cap = os.getenv(THREADS_ENV)
    if cap:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError:
            logger.warning(f"Ignoring non-integer {THREADS_ENV}={cap!r}")
    return max(1, int(workers))


def run_indexed(func: Callable[[int], T],
                indices: Sequence[int],
                max_workers: int = 1,
                label: str = 'job') -> List[T]:
    """
    Run ``func(i)`` for every index concurrently and return results in index order.

    Args:
        func: Job taking one index
        indices: Indices to run
        max_workers: Maximum number of concurrent workers
        label: Name used in log messages

    Returns:
        Results ordered like ``indices``, regardless of completion order

    Raises:
        The first job exception, with the failing index attached as ``failed_index``
    """
    if max_workers <= 1 or len(indices) <= 1:
        results = []
        for i in indices:
            try:
                results.append(func(i))
            except Exception as e:
                logger.error(f"Error in {label} {i}: {e}")
                e.failed_index = i
                raise
        return results

    results: Dict[int, T] = {}
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        future_to_index = {executor.submit(func, i): i for i in indices}

        for future in as_completed(future_to_index):
            i = future_to_index[future]
            try:
                results[i] = future.result()
                logger.debug(f"Finished {label} {i}")
            except Exception as e:
                logger.error(f"Error in {label} {i}: {e}")
                for pending in future_to_index:
                    pending.cancel()
                e.failed_index = i
                raise

    return [results[i] for i in indices]


def calculate_processing_stats(start_time: datetime,
                               n_eps: int,
                               solves: int,
                               rows_within_bound: int) -> Dict:
    """
    Calculate sweep statistics.

    Args:
        start_time: Sweep start time
        n_eps: Number of eps values processed
        solves: Number of linear or exact slice solves performed
        rows_within_bound: Rows whose bound flag is true

    Returns:
        Statistics dictionary
    """
    duration = (datetime.now() - start_time).total_seconds()

    stats = {
        'duration_seconds': duration,
        'eps_processed': n_eps,
        'solves': solves,
        'rows_within_bound': rows_within_bound,
        'bound_rate': (rows_within_bound / n_eps * 100) if n_eps > 0 else 0,
        'solves_per_second': solves / duration if duration > 0 else 0
    }

    return stats


def print_processing_summary(stats: Dict):
    """Print sweep summary."""
    print("\n" + "=" * 50)
    print("Sweep Summary")
    print("=" * 50)
    print(f"Duration: {stats['duration_seconds']:.1f} seconds")
    print(f"Epsilon values: {stats['eps_processed']}")
    print(f"Slice solves: {stats['solves']}")
    print(f"Rows within bound: {stats['rows_within_bound']} ({stats['bound_rate']:.1f}%)")
    print(f"Solve speed: {stats['solves_per_second']:.2f} solves/second")
    print("=" * 50)

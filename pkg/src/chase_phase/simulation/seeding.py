"""
Deterministic seed derivation and parallel batch execution.

Every child stream is a function of (master seed, index) only, so results do not depend on
how batches are scheduled across workers.
"""

import logging
from collections.abc import Callable
from typing import Any, Optional

import numpy as np
from joblib import Parallel, delayed

from src.chase_phase.common import LOGGER_NAME, default_threads
from src.chase_phase.exceptions import InvalidParameterError

logger = logging.getLogger(LOGGER_NAME)

MAX_SEED: int = 2**64 - 1


def check_seed(seed: int) -> int:
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool) or not 0 <= seed <= MAX_SEED:
        raise InvalidParameterError("seed", seed, "seed must be an unsigned 64-bit integer")
    return int(seed)


def child_sequence(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=check_seed(master_seed), spawn_key=(index,))


def child_generator(master_seed: int, index: int) -> np.random.Generator:
    """PCG64 stream for (master seed, index)."""
    return np.random.Generator(np.random.PCG64(child_sequence(master_seed, index)))


def child_seed(master_seed: int, index: int) -> int:
    """A 64-bit integer seed for (master seed, index), for runs that record their own seed."""
    return int(child_sequence(master_seed, index).generate_state(1, dtype=np.uint64)[0])


def batch_sizes(total: int, batch_size: int) -> list[int]:
    if total < 0:
        raise InvalidParameterError("total", total)
    if batch_size < 1:
        raise InvalidParameterError("batch_size", batch_size)
    full, rest = divmod(total, batch_size)
    return [batch_size] * full + ([rest] if rest else [])


def run_batches(
    func: Callable[..., Any],
    total: int,
    batch_size: int,
    master_seed: int,
    threads: Optional[int] = None,
    **kwargs,
) -> list[Any]:
    """
    Call ``func(batch_index, start, size, master_seed, **kwargs)`` once per batch.

    Results come back in batch order whatever the worker count; ``threads=1`` runs serially
    in-process.

    :param func: module-level callable (it is pickled for worker processes)
    :param total: number of work items, split into batches of ``batch_size``
    """
    check_seed(master_seed)
    threads = threads or default_threads()
    sizes = batch_sizes(total, batch_size)
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(int).tolist() if sizes else []
    jobs = [
        delayed(func)(index, start, size, master_seed, **kwargs)
        for index, (start, size) in enumerate(zip(starts, sizes))
    ]
    n_jobs = min(threads, max(len(jobs), 1))
    logger.debug(f"Running {len(jobs)} batches of up to {batch_size} on {n_jobs} workers")
    if n_jobs == 1:
        return [job[0](*job[1], **job[2]) for job in jobs]
    return Parallel(n_jobs=n_jobs)(jobs)

"""Counter-based seeding and order-preserving parallel map.

Every stochastic task receives its own generator derived from the master
seed and the task index, so results do not depend on how many workers run
them or in which order they finish.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "NETRISK_THREADS"


def task_rng(seed: int, *counter: int) -> np.random.Generator:
    """Generator for task ``counter`` under master ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(c) for c in counter))
    return np.random.Generator(np.random.PCG64(ss))


def as_rng(seed: int | np.random.Generator | None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else 1
    return max(1, int(threads))


def ordered_map(
    fn: Callable[[T], R], items: Iterable[T] | Sequence[T], threads: int | None = None
) -> list[R]:
    """``[fn(x) for x in items]``, optionally on a thread pool; order preserved."""
    items = list(items)
    n = resolve_threads(threads)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))

"""Deterministic random streams and order-preserving parallel maps.

Every unit of work (a block of realizations) draws from its own generator,
derived from ``(seed, *key)`` through :class:`numpy.random.SeedSequence`.  The
result of a computation therefore depends on the seed and on the block
layout, never on the number of workers or on scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

BLOCK_SIZE = 500


def stream(seed, *key):
    """Generator for the sub-stream ``key`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def blocks(n, size=BLOCK_SIZE):
    """Split ``range(n)`` into consecutive ``(index, start, count)`` blocks."""
    return [(b, start, min(size, n - start)) for b, start in enumerate(range(0, n, size))]


def resolve_workers(workers):
    if workers is None or workers == 0:
        return 1
    if workers < 0:
        return os.cpu_count() or 1
    return int(workers)


def pmap(func, items, workers=1):
    """``list(map(func, items))``, optionally in worker processes.

    Output order always follows ``items``.
    """
    items = list(items)
    workers = resolve_workers(workers)
    if workers == 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(func, items))


def child_seed(seed, *key):
    """64-bit seed for an independent sub-computation ``key`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])

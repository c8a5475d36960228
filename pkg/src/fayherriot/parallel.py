"""Ordered, deterministic parallel map.

Work items run on a thread pool (numpy/LAPACK release the GIL) while the
BLAS pool is pinned to one thread, so results do not depend on how many
workers are used.
"""

import os
from concurrent.futures import ThreadPoolExecutor

from threadpoolctl import threadpool_limits

THREADS_ENV = "FAYHERRIOT_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def ordered_map(fn, items, threads=None):
    """``[fn(x) for x in items]``, evaluated on up to ``threads`` workers."""
    threads = default_threads() if threads is None else max(1, int(threads))
    items = list(items)
    with threadpool_limits(limits=1):
        if threads == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))

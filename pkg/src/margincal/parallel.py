"""Process-pool map with deterministic, schedule-independent results.

Workers receive picklable (fn, item) pairs; all randomness in this package
derives from per-item seed tuples, so the output depends only on the items,
never on scheduling.
"""

from concurrent.futures import ProcessPoolExecutor

__all__ = ["parallel_map"]


def parallel_map(fn, items, jobs: int = 1, chunksize: int = 1) -> list:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))

"""Process-pool map for independent simulations."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

WORKERS_ENV = "HYBRIDCOVER_WORKERS"


def worker_count(requested: int | None = None) -> int:
    if requested is None:
        env = os.environ.get(WORKERS_ENV)
        if env:
            try:
                requested = int(env)
            except ValueError:
                raise ValueError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        else:
            requested = os.cpu_count() or 1
    return max(1, requested)


def pmap(fn, items, workers: int | None = None) -> list:
    """``[fn(x) for x in items]``, in worker processes when more than one is allowed."""
    items = list(items)
    workers = min(worker_count(workers), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))

"""Bounded worker pool with results returned in submission order."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

from .errors import ParameterError


def worker_count(requested: int | None = None) -> int:
    """Number of workers: ``requested`` if given, else ``ISINGLAB_THREADS``, else 1."""
    if requested is None:
        env = os.environ.get("ISINGLAB_THREADS")
        if env is None or env == "":
            return 1
        try:
            requested = int(env)
        except ValueError as exc:
            raise ParameterError(f"ISINGLAB_THREADS must be an integer, got {env!r}") from exc
    if requested < 1:
        raise ParameterError("worker count must be >= 1")
    return min(requested, os.cpu_count() or 1)


def ordered_map(fn, items, workers: int | None = None) -> list:
    """``[fn(x) for x in items]``, possibly in parallel; order follows ``items``."""
    items = list(items)
    n = worker_count(workers)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))

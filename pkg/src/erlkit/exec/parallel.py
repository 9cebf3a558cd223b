"""Deterministic parallel map over a thread pool."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Sequence

import numpy as np

from erlkit.exec import rng


def resolve_workers(workers: int | None) -> int:
    """``0`` or ``None`` means one worker per available core."""
    if not workers:
        try:
            return max(1, len(os.sched_getaffinity(0)))
        except AttributeError:  # pragma: no cover - non-Linux
            return max(1, os.cpu_count() or 1)
    if workers < 0:
        raise ValueError(f"workers must be >= 0, got {workers}")
    return int(workers)


def parallel_map(
    f: Callable[..., Any],
    items: Sequence[Any],
    key=None,
    workers: int | None = 1,
) -> list[Any]:
    """Apply ``f`` to every item, results in input order.

    With a key, item ``i`` is called as ``f(item, fold_in(key, i))``. ``f``
    must be pure over its arguments; the output never depends on the worker
    count or on scheduling.
    """
    n = len(items)
    if n == 0:
        return []
    if key is not None:
        keys = rng.fold_in(rng.as_key(key)[None, :], np.arange(n, dtype=np.int64))
        calls = [(items[i], keys[i]) for i in range(n)]
    else:
        calls = [(items[i],) for i in range(n)]
    w = min(resolve_workers(workers), n)
    if w == 1:
        return [f(*c) for c in calls]
    with ThreadPoolExecutor(max_workers=w) as pool:
        futures = [pool.submit(f, *c) for c in calls]
        return [fut.result() for fut in futures]


def chunk_bounds(n: int, parts: int) -> list[tuple[int, int]]:
    """Split ``range(n)`` into at most ``parts`` contiguous, near-equal slices."""
    parts = max(1, min(parts, n))
    base, extra = divmod(n, parts)
    bounds = []
    start = 0
    for p in range(parts):
        stop = start + base + (1 if p < extra else 0)
        bounds.append((start, stop))
        start = stop
    return bounds

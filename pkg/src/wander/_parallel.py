from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def n_threads() -> int:
    raw = os.environ.get("WANDER_THREADS", "")
    if raw.strip():
        return max(1, int(raw))
    return os.cpu_count() or 1


def pmap(fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
    """Ordered map over a thread pool sized by ``WANDER_THREADS``.

    Work items must be independent; results come back in input order, so the
    output never depends on the pool size.
    """
    items = list(items)
    workers = min(n_threads(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def chunks(n: int, size: int) -> List[range]:
    return [range(i, min(i + size, n)) for i in range(0, n, size)]

"""Order-preserving task map over a bounded process pool."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

from threadpoolctl import threadpool_limits


def _call(fn_item):
    fn, item = fn_item
    # one BLAS thread everywhere so serial and pooled runs take the same code path
    with threadpool_limits(limits=1):
        return fn(item)


def run_tasks(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally on ``workers`` processes.

    Results come back in input order whatever the scheduling, so aggregation
    downstream is deterministic.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [_call((fn, x)) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(_call, [(fn, x) for x in items]))

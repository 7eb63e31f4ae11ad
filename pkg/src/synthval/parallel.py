"""Order-preserving process pool.

Results come back in task order whatever the completion order, and every
task carries its own RNG substream, so outputs do not depend on the worker
count.
"""

from __future__ import annotations

import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")


def run_tasks(fn: Callable[..., T], tasks: Sequence[tuple], workers: int = 1) -> list[T]:
    """``[fn(*args) for args in tasks]``, optionally across worker processes.

    ``fn`` must be a module-level function and must not raise for expected
    failures; encode those in its return value.
    """
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*args) for args in tasks]
    methods = multiprocessing.get_all_start_methods()
    ctx = multiprocessing.get_context("fork" if "fork" in methods else "spawn")
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks)), mp_context=ctx) as pool:
        futures = [pool.submit(fn, *args) for args in tasks]
        return [f.result() for f in futures]

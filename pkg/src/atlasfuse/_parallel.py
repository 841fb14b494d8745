"""Internal parallelism cap, controlled by ATLASFUSE_THREADS (0 = auto).

Per-structure loops (STAPLE runs, metric evaluation) are independent pure
computations, so any worker count yields bit-identical results; the env var
only bounds concurrency.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_VAR = "ATLASFUSE_THREADS"


def thread_count() -> int:
    raw = os.environ.get(ENV_VAR, "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return max(1, n)


def run_indexed(fn, args_list):
    """Apply ``fn`` to each element, preserving input order in the output."""
    workers = thread_count()
    if workers == 1 or len(args_list) <= 1:
        return [fn(a) for a in args_list]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, args_list))

"""Worker-count control for the compiled kernels.

All kernels are written so their results are bitwise independent of the
worker count: parallel loops only ever write disjoint output rows, and
reductions follow a fixed schedule.  ``FSA_WORKERS`` (or :func:`set_workers`)
therefore only changes how fast a kernel runs, never what it computes.

Numba caps its thread pool at import time, so the cap is raised here before
numba is first imported anywhere in the package.
"""

from __future__ import annotations

import os

MAX_WORKERS = 8

# Raise numba's thread-pool cap before it loads; harmless when oversubscribed
# (threads time-share), required for set_num_threads(n > cpu_count).
if "NUMBA_NUM_THREADS" not in os.environ:
    os.environ["NUMBA_NUM_THREADS"] = str(max(MAX_WORKERS, os.cpu_count() or 1))

import numba  # noqa: E402

# default to the physical core count; FSA_WORKERS / set_workers may raise it
numba.set_num_threads(min(os.cpu_count() or 1, int(numba.config.NUMBA_NUM_THREADS)))


def max_workers() -> int:
    return int(numba.config.NUMBA_NUM_THREADS)


def set_workers(n: int) -> int:
    """Pin the kernel thread count to ``n`` (clamped to the pool size)."""
    if n < 1:
        raise ValueError(f"worker count must be >= 1, got {n}")
    n = min(n, max_workers())
    numba.set_num_threads(n)
    return n


def get_workers() -> int:
    return int(numba.get_num_threads())


def apply_env_workers() -> int:
    """Apply the FSA_WORKERS override, if present.  Returns the active count."""
    raw = os.environ.get("FSA_WORKERS")
    if raw is None:
        return get_workers()
    try:
        return set_workers(int(raw))
    except ValueError as exc:
        raise ValueError(f"invalid FSA_WORKERS value {raw!r}") from exc

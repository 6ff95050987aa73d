"""Deterministic chunked execution of Monte Carlo kernels.

Trials are split into fixed-size chunks whose boundaries depend only on the
trial count, never on the number of workers. Every trial draws from its own
counter-based stream, and chunk results are combined in chunk order, so the
output is bit-identical for any ``threads`` value. The compiled kernels
release the GIL, which lets a thread pool use several cores.
"""

from __future__ import annotations

import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

T = TypeVar("T")

DEFAULT_CHUNK = 65536


def chunk_bounds(n_trials: int, chunk: int = DEFAULT_CHUNK) -> list[tuple[int, int]]:
    if n_trials < 0 or chunk < 1:
        raise ValueError("n_trials must be >= 0 and chunk >= 1")
    return [(s, min(chunk, n_trials - s)) for s in range(0, n_trials, chunk)]


def default_threads() -> int:
    return max(1, os.cpu_count() or 1)


def run_chunked(fn: Callable[[int, int], T], n_trials: int, threads: int | None = 1,
                chunk: int = DEFAULT_CHUNK, progress: str | None = None) -> list[T]:
    """Apply ``fn(start, count)`` to every chunk and return results in chunk order.

    Parameters
    ----------
    fn : callable
        Must be a pure function of ``(start, count)``.
    threads : int or None
        Worker threads; ``None`` uses all cores.
    progress : str, optional
        Label for a progress line on standard error.
    """
    bounds = chunk_bounds(n_trials, chunk)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(bounds) <= 1:
        results = []
        for i, (s, c) in enumerate(bounds):
            results.append(fn(s, c))
            _report(progress, i + 1, len(bounds))
        return results
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, s, c) for s, c in bounds]
        results = []
        for i, f in enumerate(futures):
            results.append(f.result())
            _report(progress, i + 1, len(bounds))
        return results


def _report(label, done, total):
    if label and total > 1:
        end = "\n" if done == total else "\r"
        sys.stderr.write(f"{label}: chunk {done}/{total}{end}")
        sys.stderr.flush()

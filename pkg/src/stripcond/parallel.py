"""Deterministic parallel Monte Carlo batches.

Each batch draws from a generator keyed by (seed, stream, batch index), and
results are reduced in batch order, so output is byte-identical for any
thread count (the single-writer reduction contract).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List

from .models import RngStream


def run_batches(fn: Callable, n_batches: int, rng: RngStream,
                threads: int = 1) -> List:
    """fn(batch_index, generator) -> result, gathered in index order."""
    if threads <= 1 or n_batches <= 1:
        return [fn(i, rng.batch_generator(i)) for i in range(n_batches)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, i, rng.batch_generator(i))
                   for i in range(n_batches)]
        return [f.result() for f in futures]

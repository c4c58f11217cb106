"""Streaming ensemble statistics and deterministic block-parallel reduction.

Ensembles are cut into fixed-size blocks of item indices.  Each block is
reduced to a :class:`RunSummary` and the blocks are merged pairwise in index
order, so the result never depends on how many workers computed the blocks.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

BLOCK_SIZE = 512


@dataclass(frozen=True)
class RunSummary:
    """Count, mean and sum of squared deviations; ``mean``/``m2`` may be arrays."""

    count: int = 0
    mean: float | np.ndarray = 0.0
    m2: float | np.ndarray = 0.0

    @classmethod
    def from_values(cls, values, axis: int = 0) -> "RunSummary":
        values = np.asarray(values, dtype=float)
        count = values.shape[axis]
        if count == 0:
            return cls()
        mean = np.mean(values, axis=axis)
        m2 = np.sum(np.square(values - np.expand_dims(mean, axis)), axis=axis)
        return cls(count, mean, m2)

    @property
    def variance(self):
        """Sample variance (``m2 / (count - 1)``); zero for fewer than two samples."""
        if self.count < 2:
            return np.zeros_like(np.asarray(self.m2, dtype=float))
        return np.asarray(self.m2) / (self.count - 1)

    @property
    def standard_error(self):
        if self.count == 0:
            return np.zeros_like(np.asarray(self.m2, dtype=float))
        return np.sqrt(self.variance / self.count)

    def __getitem__(self, idx) -> "RunSummary":
        return RunSummary(self.count, np.asarray(self.mean)[idx], np.asarray(self.m2)[idx])


def merge_summaries(a: RunSummary, b: RunSummary) -> RunSummary:
    """Pooled summary of two disjoint samples.

    Every arithmetic step is symmetric in ``a`` and ``b``, so the merge is
    bitwise commutative.
    """
    if a.count == 0:
        return b
    if b.count == 0:
        return a
    n = a.count + b.count
    mean = (a.count * np.asarray(a.mean) + b.count * np.asarray(b.mean)) / n
    d = np.asarray(b.mean) - np.asarray(a.mean)
    m2 = (np.asarray(a.m2) + np.asarray(b.m2)) + d * d * (a.count * b.count) / n
    return RunSummary(n, mean, m2)


def tree_reduce(items: Sequence, merge: Callable):
    """Pairwise reduction in fixed index order."""
    items = list(items)
    if not items:
        raise ValueError("nothing to reduce")
    while len(items) > 1:
        paired = [merge(items[i], items[i + 1]) for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            paired.append(items[-1])
        items = paired
    return items[0]


def merge_summary_dicts(a: dict, b: dict) -> dict:
    return {key: merge_summaries(a[key], b[key]) for key in a}


def blocks(n_items: int, block_size: int = BLOCK_SIZE) -> list[tuple[int, int]]:
    return [(start, min(start + block_size, n_items)) for start in range(0, n_items, block_size)]


def default_workers() -> int:
    return os.cpu_count() or 1


def run_blocks(fn: Callable, n_items: int, workers: int | None = 1, block_size: int = BLOCK_SIZE) -> list:
    """Evaluate ``fn(start, stop)`` on every block, results in block order.

    ``fn`` must be picklable when ``workers > 1``.
    """
    spans = blocks(n_items, block_size)
    workers = default_workers() if workers is None else int(workers)
    if workers <= 1 or len(spans) <= 1:
        return [fn(start, stop) for start, stop in spans]
    with ProcessPoolExecutor(max_workers=min(workers, len(spans))) as pool:
        return list(pool.map(_call_span, [fn] * len(spans), spans))


def _call_span(fn, span):
    return fn(*span)

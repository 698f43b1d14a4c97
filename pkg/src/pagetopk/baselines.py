"""Baseline page scorers: elementwise min/max bounds and mean-only.

The min/max scorer upper-bounds the best dot product any key in the page
can reach: for each dimension the larger of ``q_d * min_d`` and
``q_d * max_d`` is attainable by some coordinate value in the page's box.
Mean-only is the spread-weight-zero special case of the criticality score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kvcache import PagedKvCache, PageStats
from .scoring import score_page


@dataclass
class MinMaxStats:
    """Per-dimension elementwise key bounds of one page."""

    count: int
    min: np.ndarray  # (head_dim,) f32
    max: np.ndarray  # (head_dim,) f32


def compute_minmax(keys: np.ndarray) -> MinMaxStats:
    rows = np.asarray(keys, dtype=np.float32)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("keys must be a non-empty (count, head_dim) array")
    return MinMaxStats(count=rows.shape[0], min=rows.min(axis=0), max=rows.max(axis=0))


def quest_score(q: np.ndarray, stats: MinMaxStats) -> float:
    """Upper bound on max_j q . k_j over the page's keys."""
    q32 = np.asarray(q, dtype=np.float32)
    return float(np.sum(np.maximum(q32 * stats.min, q32 * stats.max)))


def quest_scores(q: np.ndarray, mins: np.ndarray, maxs: np.ndarray) -> np.ndarray:
    """Vectorized :func:`quest_score` over stacked page bounds."""
    q32 = np.asarray(q, dtype=np.float32)
    return np.sum(np.maximum(q32 * mins, q32 * maxs), axis=1)


def minmax_arrays(cache: PagedKvCache, head: int) -> tuple[np.ndarray, np.ndarray]:
    """Stacked per-page (mins, maxs) for one head in logical order."""
    n_pages = cache.num_pages(head)
    dim = cache.layout.head_dim
    mins = np.empty((n_pages, dim), dtype=np.float32)
    maxs = np.empty((n_pages, dim), dtype=np.float32)
    for p in range(n_pages):
        rows = cache.page_keys(head, p)
        mins[p] = rows.min(axis=0)
        maxs[p] = rows.max(axis=0)
    return mins, maxs


def mean_only_score(q: np.ndarray, stats: PageStats) -> float:
    """Criticality score with the spread term dropped."""
    return score_page(q, stats, 0.0)

"""Criticality scoring of cached pages against a query group.

A page's score is ``q . mean + lam * ||q||_2 * std``: the mean term is the
average dot product against the page's keys, and the spread term is an
optimistic allowance for how far individual keys can land from that average.
Grouped scoring takes the max over the query heads that share a KV head, so
a page kept critical by any head in the group survives selection.

Scores are produced in f32 and rounded to bf16 for the selection kernel.

The two scoring strategies share results but not traffic. The fused path
reads each page's stats once and writes one score per page in a single
launch. The naive path launches a matmul for the raw group-by-page scores,
an elementwise add of the rank-one spread offset, and a column max; both
group-by-page intermediates make a round trip through main storage.
``TrafficReport`` pins those costs as exact closed-form scalar counts, which
is what "single pass" means here, independent of how a backend fuses loops.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backend import active_backend
from .bf16 import f32_to_bf16
from .kvcache import PageStats


@dataclass(frozen=True)
class QueryGroup:
    """The query heads sharing one KV head, with precomputed l2 norms."""

    queries: np.ndarray  # (group, head_dim) f32
    norms: np.ndarray  # (group,) f32

    @classmethod
    def from_queries(cls, queries: np.ndarray) -> "QueryGroup":
        q = np.ascontiguousarray(queries, dtype=np.float32)
        if q.ndim == 1:
            q = q[None, :]
        if q.ndim != 2 or q.shape[0] < 1:
            raise ValueError("queries must be a non-empty (group, head_dim) array")
        norms = np.sqrt(np.sum(q.astype(np.float64) ** 2, axis=1)).astype(np.float32)
        return cls(queries=q, norms=norms)

    @property
    def group_size(self) -> int:
        return self.queries.shape[0]

    @property
    def head_dim(self) -> int:
        return self.queries.shape[1]


@dataclass
class ScoreVector:
    """Per-page criticality scores for one KV head, in f32 and bf16."""

    head: int
    scores_f32: np.ndarray  # (n_pages,) f32
    scores_bf16: np.ndarray  # (n_pages,) uint16 bit patterns

    def __len__(self) -> int:
        return self.scores_f32.shape[0]


@dataclass(frozen=True)
class TrafficReport:
    """Exact scalar read/write/launch counts for a scoring strategy."""

    scalar_reads: int
    scalar_writes: int
    launches: int

    @property
    def total(self) -> int:
        return self.scalar_reads + self.scalar_writes


def _stats_as_arrays(stats) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(stats, tuple):
        means, stds = stats[0], stats[1]
    else:
        seq: Sequence[PageStats] = stats
        if len(seq) == 0:
            means = np.empty((0, 1), dtype=np.float32)
            stds = np.empty(0, dtype=np.float32)
        else:
            means = np.stack([s.mean for s in seq])
            stds = np.array([s.std for s in seq], dtype=np.float32)
    return (
        np.ascontiguousarray(means, dtype=np.float32),
        np.ascontiguousarray(stds, dtype=np.float32),
    )


def score_page(q: np.ndarray, stats: PageStats, lam: float = 0.5) -> float:
    """Score one page against one query head."""
    q32 = np.asarray(q, dtype=np.float32)
    mean_term = np.float32(q32 @ stats.mean)
    norm = np.float32(np.sqrt(np.sum(q32.astype(np.float64) ** 2)))
    return float(mean_term + np.float32(lam) * norm * np.float32(stats.std))


def score_pages_grouped(
    group: QueryGroup, stats, lam: float = 0.5, head: int = 0
) -> ScoreVector:
    """Fused group-max scores over all pages of one head.

    ``stats`` is either a sequence of PageStats or a (means, stds) array
    pair in logical page order. Single launch; traffic per
    :func:`traffic_of_fused`.
    """
    means, stds = _stats_as_arrays(stats)
    if stds.shape[0] == 0:
        scores = np.empty(0, dtype=np.float32)
    else:
        scores = active_backend().fused_scores(
            group.queries, group.norms, means, stds, float(lam)
        )
    return ScoreVector(head=head, scores_f32=scores, scores_bf16=f32_to_bf16(scores))


def score_pages_naive(
    group: QueryGroup, stats, lam: float = 0.5, head: int = 0
) -> tuple[ScoreVector, TrafficReport]:
    """Three-launch scoring: matmul, rank-one offset add, column max.

    Same scores as the fused path up to f32 accumulation order; used as its
    dual route in tests. Traffic per :func:`traffic_of_naive`.
    """
    means, stds = _stats_as_arrays(stats)
    if stds.shape[0] == 0:
        scores = np.empty(0, dtype=np.float32)
    else:
        raw = group.queries @ means.T  # launch 1: (group, n_pages) materialized
        offset = raw + np.float32(lam) * group.norms[:, None] * stds[None, :]  # launch 2
        scores = np.max(offset, axis=0)  # launch 3
    vec = ScoreVector(head=head, scores_f32=scores, scores_bf16=f32_to_bf16(scores))
    return vec, traffic_of_naive(group.group_size, len(vec), group.head_dim)


def traffic_of_fused(group: int, n_pages: int, head_dim: int) -> TrafficReport:
    """Closed-form traffic of the fused strategy.

    Reads the group queries once plus each page's stats (head_dim + 1
    scalars) once; writes one score per page; one launch.
    """
    return TrafficReport(
        scalar_reads=group * head_dim + n_pages * (head_dim + 1),
        scalar_writes=n_pages,
        launches=1,
    )


def traffic_of_naive(group: int, n_pages: int, head_dim: int) -> TrafficReport:
    """Closed-form traffic of the three-launch strategy.

    On top of the fused counts, the raw and the offset group-by-page score
    tensors are each written once and read back once.
    """
    round_trips = 2 * group * n_pages
    return TrafficReport(
        scalar_reads=group * head_dim + n_pages * (head_dim + 1) + round_trips,
        scalar_writes=n_pages + round_trips,
        launches=3,
    )


def traffic_write_ratio(naive: TrafficReport, fused: TrafficReport) -> float:
    """Ratio of scalars written to main storage, naive over fused.

    Writes are the component fusion eliminates: the fused kernel writes one
    scalar per page while the naive pipeline also materializes both
    group-by-page intermediates.
    """
    return naive.scalar_writes / fused.scalar_writes

"""Seeded synthetic decode workloads.

The dilution workload plants a small number of pages that matter to the
query but hide from a mean-based scorer: one key in each planted page is
given a query-aligned component ``planted_gain`` times the typical noise
projection, while the page's other keys stay noise. Averaging spreads the
sharp key's contribution over the whole page, so the planted page's mean
score sinks into the noise-page distribution even though its true
attention mass is dominant; its key spread, however, rises, which is what
the spread-aware scorer keys on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..kvcache import CacheLayout, PagedKvCache


@dataclass(frozen=True)
class WorkloadSpec:
    """Shape and randomness of one synthetic workload."""

    seed: int
    n_tokens: int
    head_dim: int
    page_size: int = 8
    num_query_heads: int = 1
    num_kv_heads: int = 1
    key_scale: float = 1.0
    planted_pages: int = 0
    planted_gain: float = 6.0

    def __post_init__(self) -> None:
        if self.n_tokens < 1:
            raise ValueError("n_tokens must be positive")
        if self.num_query_heads % self.num_kv_heads != 0:
            raise ValueError("query heads must divide evenly among KV heads")
        n_pages = -(-self.n_tokens // self.page_size)
        if self.planted_pages > n_pages:
            raise ValueError("more planted pages than pages")
        if self.planted_pages > 0 and self.planted_gain <= 1.0:
            raise ValueError("planted_gain must exceed 1")

    @property
    def n_pages(self) -> int:
        return -(-self.n_tokens // self.page_size)


@dataclass
class Workload:
    spec: WorkloadSpec
    cache: PagedKvCache
    queries: np.ndarray  # (num_query_heads, head_dim) f32
    planted: list[np.ndarray]  # per KV head, logical indices of planted pages


def gen_workload(spec: WorkloadSpec) -> Workload:
    """Generate a workload; the same seed reproduces it bit for bit."""
    rng = np.random.default_rng(spec.seed)
    queries = rng.standard_normal((spec.num_query_heads, spec.head_dim)).astype(
        np.float32
    )
    layout = CacheLayout(
        num_kv_heads=spec.num_kv_heads,
        head_dim=spec.head_dim,
        page_size=spec.page_size,
        max_pages=spec.num_kv_heads * spec.n_pages,
    )
    cache = PagedKvCache(layout)
    group_size = spec.num_query_heads // spec.num_kv_heads

    planted: list[np.ndarray] = []
    for head in range(spec.num_kv_heads):
        keys = rng.standard_normal((spec.n_tokens, spec.head_dim)) * spec.key_scale
        values = rng.standard_normal((spec.n_tokens, spec.head_dim)) * spec.key_scale
        if spec.planted_pages > 0:
            # Plant against the head's first group query. Only full pages
            # are eligible so every planted page dilutes over page_size rows.
            full_pages = spec.n_tokens // spec.page_size
            pages = rng.choice(full_pages, size=spec.planted_pages, replace=False)
            pages = np.sort(pages)
            q_ref = queries[head * group_size].astype(np.float64)
            direction = q_ref / np.linalg.norm(q_ref)
            for page in pages:
                slot = int(page) * spec.page_size + int(rng.integers(spec.page_size))
                residual = rng.standard_normal(spec.head_dim)
                residual -= (residual @ direction) * direction
                keys[slot] = spec.key_scale * (
                    spec.planted_gain * direction + residual
                )
            planted.append(pages.astype(np.int64))
        else:
            planted.append(np.empty(0, dtype=np.int64))
        cache.extend(head, keys.astype(np.float32), values.astype(np.float32))
    return Workload(spec=spec, cache=cache, queries=queries, planted=planted)

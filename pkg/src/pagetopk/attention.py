"""Decode-side attention: dense reference, sparse over selected pages, and
the full scored decode step.

All variants share one streaming softmax kernel that walks fixed-size row
blocks with running-max rescaling, so a single block never has to hold the
whole context and the sparse path consumes whole pages. Outputs are f32;
the log-sum-exp comes back as a double for downstream checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .backend import active_backend
from .kvcache import PagedKvCache
from .scoring import QueryGroup, ScoreVector, score_pages_grouped
from .select import TopKSelection, radix_topk


@dataclass
class AttentionOutput:
    """Attention result for one query: output vector and log-sum-exp."""

    out: np.ndarray  # (head_dim,) f32
    lse: float


@dataclass(frozen=True)
class DecodeConfig:
    """Decode-step knobs: page budget, spread weight, logit scale.

    ``scale=None`` means the conventional 1/sqrt(head_dim).
    """

    k: int = 64
    lam: float = 0.5
    scale: float | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be at least 1")

    @classmethod
    def from_budget(cls, budget_tokens: int, page_size: int, **kw) -> "DecodeConfig":
        """Convert a token budget to a page budget (rounded up)."""
        if budget_tokens < 1:
            raise ValueError("budget_tokens must be positive")
        return cls(k=-(-budget_tokens // page_size), **kw)

    def resolve_scale(self, head_dim: int) -> float:
        return 1.0 / math.sqrt(head_dim) if self.scale is None else self.scale


def _run_stream(
    q: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    scale: float,
    block_size: int,
) -> AttentionOutput:
    n = keys.shape[0]
    n_blocks = -(-n // block_size)
    bias = np.zeros(n_blocks, dtype=np.float32)
    out, lse = active_backend().stream_attention(
        np.ascontiguousarray(q, dtype=np.float32),
        np.ascontiguousarray(keys, dtype=np.float32),
        np.ascontiguousarray(values, dtype=np.float32),
        float(scale),
        block_size,
        bias,
    )
    return AttentionOutput(out=out, lse=lse)


def dense_attention(
    q: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    scale: float | None = None,
    block_size: int = 8,
) -> AttentionOutput:
    """Softmax attention of one query over the full context."""
    keys = np.asarray(keys)
    if keys.ndim != 2 or keys.shape[0] == 0:
        raise ValueError("attention over an empty context is undefined")
    if scale is None:
        scale = 1.0 / math.sqrt(keys.shape[1])
    return _run_stream(q, keys, values, scale, block_size)


def sparse_attention(
    q: np.ndarray,
    cache: PagedKvCache,
    head: int,
    selection: TopKSelection,
    scale: float | None = None,
) -> AttentionOutput:
    """Softmax attention restricted to the selected pages of one head."""
    if len(selection) == 0:
        raise ValueError("attention over an empty selection is undefined")
    keys, values = cache.gather_pages(head, selection.physical_ids)
    if scale is None:
        scale = 1.0 / math.sqrt(cache.layout.head_dim)
    return _run_stream(q, keys, values, scale, cache.layout.page_size)


def decode_step(
    cache: PagedKvCache,
    queries: np.ndarray,
    cfg: DecodeConfig = DecodeConfig(),
) -> tuple[list[AttentionOutput], list[TopKSelection]]:
    """One sparse decode step for all query heads.

    Query heads are split into contiguous groups per KV head. Each KV head
    scores its pages once against its whole group, selects the top ``cfg.k``
    pages once, and every query head in the group attends over that shared
    selection.

    Returns one AttentionOutput per query head (row order of ``queries``)
    and one TopKSelection per KV head.
    """
    queries = np.asarray(queries, dtype=np.float32)
    if queries.ndim != 2:
        raise ValueError("queries must be (num_query_heads, head_dim)")
    n_heads = queries.shape[0]
    n_kv = cache.layout.num_kv_heads
    if n_heads % n_kv != 0:
        raise ValueError(f"{n_heads} query heads not divisible by {n_kv} KV heads")
    group_size = n_heads // n_kv
    scale = cfg.resolve_scale(cache.layout.head_dim)

    outputs: list[AttentionOutput] = []
    selections: list[TopKSelection] = []
    for head in range(n_kv):
        group = QueryGroup.from_queries(queries[head * group_size : (head + 1) * group_size])
        means, stds, _ = cache.stats_arrays(head)
        scores: ScoreVector = score_pages_grouped(group, (means, stds), cfg.lam, head=head)
        selection = radix_topk(scores, cfg.k, cache.table, head)
        selections.append(selection)
        for g in range(group_size):
            outputs.append(
                sparse_attention(group.queries[g], cache, head, selection, scale=scale)
            )
    return outputs, selections

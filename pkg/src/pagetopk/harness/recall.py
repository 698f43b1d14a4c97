"""Selection-quality evaluation against the exact attention oracle.

The oracle ranks pages by the attention mass a dense softmax actually puts
on their tokens, computed in float64. A method's page recall is the overlap
of its selected pages with the oracle's top-k; mass recall is the fraction
of total attention mass its selection covers; output error compares its
sparse attention output to the dense one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..attention import dense_attention, sparse_attention
from ..baselines import minmax_arrays, quest_scores
from ..bf16 import f32_to_bf16
from ..kvcache import PagedKvCache
from ..scoring import QueryGroup, ScoreVector, score_pages_grouped
from ..select import radix_topk
from .workload import Workload

RECALL_METHODS = ("unique", "mean_only", "quest")


@dataclass
class RecallReport:
    method: str
    budget_tokens: int
    page_recall: float
    mass_recall: float
    output_err: float


def oracle_page_ranking(
    q: np.ndarray, cache: PagedKvCache, head: int
) -> tuple[np.ndarray, np.ndarray]:
    """Rank logical pages by true attention mass, descending.

    Returns (ranked logical ids, per-page mass in logical order). Masses
    sum to one. Ties rank the lower logical id first.
    """
    keys, _ = cache.full_kv(head)
    q64 = np.asarray(q, dtype=np.float64)
    logits = keys.astype(np.float64) @ q64 / np.sqrt(q64.shape[0])
    weights = np.exp(logits - logits.max())
    weights /= weights.sum()
    n_pages = cache.num_pages(head)
    size = cache.layout.page_size
    masses = np.array(
        [weights[p * size : (p + 1) * size].sum() for p in range(n_pages)]
    )
    ranked = np.argsort(-masses, kind="stable").astype(np.int64)
    return ranked, masses


def _method_scores(method: str, q: np.ndarray, cache: PagedKvCache, head: int, lam: float) -> ScoreVector:
    group = QueryGroup.from_queries(q)
    if method == "unique":
        return score_pages_grouped(group, cache.stats_arrays(head), lam, head=head)
    if method == "mean_only":
        return score_pages_grouped(group, cache.stats_arrays(head), 0.0, head=head)
    if method == "quest":
        mins, maxs = minmax_arrays(cache, head)
        scores = quest_scores(group.queries[0], mins, maxs).astype(np.float32)
        return ScoreVector(head=head, scores_f32=scores, scores_bf16=f32_to_bf16(scores))
    raise ValueError(f"unknown method {method!r}")


def eval_recall(method: str, workload: Workload, k: int, lam: float = 0.5) -> RecallReport:
    """Score, select, and attend with one method; compare to the oracle.

    Single-head workloads only: recall is a per-query diagnostic, and the
    dilution experiments use one query over one KV head.
    """
    cache = workload.cache
    if cache.layout.num_kv_heads != 1 or workload.queries.shape[0] != 1:
        raise ValueError("recall evaluation expects a single-head workload")
    if k < 1 or k > cache.num_pages(0):
        raise ValueError("k must lie in [1, n_pages]")
    q = workload.queries[0]

    scores = _method_scores(method, q, cache, 0, lam)
    selection = radix_topk(scores, k, cache.table, 0)
    selected_logical = cache.table.to_logical(0, selection.physical_ids)

    ranked, masses = oracle_page_ranking(q, cache, 0)
    oracle_top = set(ranked[:k].tolist())
    picked = set(selected_logical.tolist())

    keys, values = cache.full_kv(0)
    dense = dense_attention(q, keys, values, block_size=cache.layout.page_size)
    sparse = sparse_attention(q, cache, 0, selection)

    return RecallReport(
        method=method,
        budget_tokens=k * cache.layout.page_size,
        page_recall=len(oracle_top & picked) / k,
        mass_recall=float(masses[selected_logical].sum()),
        output_err=float(np.max(np.abs(sparse.out - dense.out))),
    )

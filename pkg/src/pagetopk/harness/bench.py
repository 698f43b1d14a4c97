"""Microbenchmarks over the decode primitives.

Each target times one operation with a fixed number of warm-up runs
discarded (20 for scoring, 50 for top-k) and reports the median over the
timed iterations: medians over many short runs, not means, so stray
scheduler noise drops out. Scoring rows carry the closed-form traffic
counts; selection rows carry the radix pass count. ``reps=0`` skips timing
entirely and reports only the deterministic count columns.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..attention import DecodeConfig, decode_step, dense_attention, sparse_attention
from ..backend import backend_name
from ..scoring import (
    QueryGroup,
    score_pages_grouped,
    score_pages_naive,
    traffic_of_fused,
    traffic_of_naive,
)
from ..select import radix_topk, topk_fallback
from .workload import WorkloadSpec, gen_workload

BENCH_TARGETS = (
    "scoring-fused",
    "scoring-naive",
    "radix-topk",
    "fallback-topk",
    "sparse-attn",
    "dense-attn",
    "decode-step",
)

_WARMUP = {
    "scoring-fused": 20,
    "scoring-naive": 20,
    "radix-topk": 50,
    "fallback-topk": 50,
    "sparse-attn": 20,
    "dense-attn": 20,
    "decode-step": 20,
}

_DEFAULT_REPS = {
    "scoring-fused": 100,
    "scoring-naive": 100,
    "radix-topk": 300,
    "fallback-topk": 300,
    "sparse-attn": 100,
    "dense-attn": 50,
    "decode-step": 50,
}


@dataclass
class BenchRow:
    target: str
    backend: str
    n_tokens: int
    n_pages: int
    group_size: int
    head_dim: int
    k: int
    warmup: int
    reps: int
    median_ns: int | None
    scalar_reads: int | None
    scalar_writes: int | None
    launches: int | None
    passes: int | None


def _time_median_ns(fn: Callable[[], object], warmup: int, reps: int) -> int:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return int(statistics.median(samples))


def linear_fit(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line fit; returns (slope, intercept, r_squared)."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    slope, intercept = np.polyfit(xa, ya, 1)
    pred = slope * xa + intercept
    ss_res = float(np.sum((ya - pred) ** 2))
    ss_tot = float(np.sum((ya - ya.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


def run_bench(
    targets: Sequence[str],
    n_tokens_list: Sequence[int],
    reps: int | None = None,
    seed: int = 0,
    head_dim: int = 128,
    num_query_heads: int = 4,
    num_kv_heads: int = 1,
    page_size: int = 8,
    budget_tokens: int = 512,
    lam: float = 0.5,
) -> list[BenchRow]:
    """Benchmark the given targets across context sizes.

    One workload per context size feeds every target, so rows are
    comparable within a size. ``reps`` overrides each target's default
    iteration count; 0 means counts only, no timing.
    """
    for target in targets:
        if target not in BENCH_TARGETS:
            raise ValueError(f"unknown bench target {target!r}")
    rows: list[BenchRow] = []
    group_size = num_query_heads // num_kv_heads
    for n_tokens in n_tokens_list:
        spec = WorkloadSpec(
            seed=seed,
            n_tokens=n_tokens,
            head_dim=head_dim,
            page_size=page_size,
            num_query_heads=num_query_heads,
            num_kv_heads=num_kv_heads,
        )
        wl = gen_workload(spec)
        cache = wl.cache
        cfg = DecodeConfig.from_budget(budget_tokens, page_size, lam=lam)
        k = min(cfg.k, cache.num_pages(0))
        group = QueryGroup.from_queries(wl.queries[:group_size])
        stats = cache.stats_arrays(0)
        scores = score_pages_grouped(group, stats, lam)
        selection = radix_topk(scores, k, cache.table, 0)
        keys, values = cache.full_kv(0)
        n_pages = cache.num_pages(0)

        fused_traffic = traffic_of_fused(group_size, n_pages, head_dim)
        naive_traffic = traffic_of_naive(group_size, n_pages, head_dim)

        def make_fn(target: str) -> Callable[[], object]:
            if target == "scoring-fused":
                return lambda: score_pages_grouped(group, stats, lam)
            if target == "scoring-naive":
                return lambda: score_pages_naive(group, stats, lam)
            if target == "radix-topk":
                return lambda: radix_topk(scores, k, cache.table, 0)
            if target == "fallback-topk":
                return lambda: topk_fallback(scores, k, cache.table, 0)
            if target == "sparse-attn":
                return lambda: sparse_attention(wl.queries[0], cache, 0, selection)
            if target == "dense-attn":
                return lambda: dense_attention(
                    wl.queries[0], keys, values, block_size=page_size
                )
            return lambda: decode_step(cache, wl.queries, cfg)

        for target in targets:
            fn = make_fn(target)
            n_reps = _DEFAULT_REPS[target] if reps is None else reps
            warmup = _WARMUP[target] if n_reps > 0 else 0
            median = _time_median_ns(fn, warmup, n_reps) if n_reps > 0 else None
            traffic = None
            if target == "scoring-fused":
                traffic = fused_traffic
            elif target == "scoring-naive":
                traffic = naive_traffic
            rows.append(
                BenchRow(
                    target=target,
                    backend=backend_name(),
                    n_tokens=n_tokens,
                    n_pages=n_pages,
                    group_size=group_size,
                    head_dim=head_dim,
                    k=k,
                    warmup=warmup,
                    reps=n_reps,
                    median_ns=median,
                    scalar_reads=traffic.scalar_reads if traffic else None,
                    scalar_writes=traffic.scalar_writes if traffic else None,
                    launches=traffic.launches if traffic else None,
                    passes=selection.passes if target == "radix-topk" else None,
                )
            )
    return rows

"""Time the compiled kernels against the pure NumPy fallback.

Runs the three hot kernels (fused page scoring, two-round radix top-k,
streaming attention) under each available backend on identical inputs and
prints one CSV row per (kernel, backend, context size) with the median
wall time and the speedup of the compiled path over the fallback.

Usage: python benchmarks/backend_compare.py [--sizes 4096,16384] [--reps 50]
"""

from __future__ import annotations

import argparse
import csv
import statistics
import sys
import time

import numpy as np

from pagetopk.backend import available_backends, set_backend
from pagetopk.harness.workload import WorkloadSpec, gen_workload
from pagetopk.scoring import QueryGroup, score_pages_grouped
from pagetopk.select import radix_topk
from pagetopk.attention import sparse_attention

KERNELS = ("fused-scores", "radix-topk", "stream-attn")


def median_ns(fn, warmup: int, reps: int) -> int:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return int(statistics.median(samples))


def bench_size(n_tokens: int, reps: int, seed: int) -> list[dict]:
    spec = WorkloadSpec(
        seed=seed,
        n_tokens=n_tokens,
        head_dim=128,
        page_size=8,
        num_query_heads=4,
        num_kv_heads=1,
    )
    wl = gen_workload(spec)
    cache = wl.cache
    group = QueryGroup.from_queries(wl.queries)
    stats = cache.stats_arrays(0)
    k = min(64, spec.n_pages)

    rows = []
    for backend in available_backends():
        set_backend(backend)
        sv = score_pages_grouped(group, stats, 0.5, head=0)
        sel = radix_topk(sv, k, cache.table, 0)

        fns = {
            "fused-scores": lambda: score_pages_grouped(group, stats, 0.5, head=0),
            "radix-topk": lambda: radix_topk(sv, k, cache.table, 0),
            "stream-attn": lambda: sparse_attention(group.queries[0], cache, 0, sel),
        }
        for kernel in KERNELS:
            rows.append(
                {
                    "kernel": kernel,
                    "backend": backend,
                    "n_tokens": n_tokens,
                    "n_pages": spec.n_pages,
                    "median_ns": median_ns(fns[kernel], max(3, reps // 10), reps),
                }
            )
    return rows


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="4096,16384,65536")
    parser.add_argument("--reps", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    backends = available_backends()
    rows = []
    for size in (int(s) for s in args.sizes.split(",")):
        rows.extend(bench_size(size, args.reps, args.seed))

    by_key = {(r["kernel"], r["backend"], r["n_tokens"]): r["median_ns"] for r in rows}
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["kernel", "backend", "n_tokens", "n_pages", "median_ns", "speedup_vs_python"])
    for r in rows:
        base = by_key.get((r["kernel"], "python", r["n_tokens"]))
        speedup = "" if base is None or r["median_ns"] == 0 else f"{base / r['median_ns']:.2f}"
        writer.writerow(
            [r["kernel"], r["backend"], r["n_tokens"], r["n_pages"], r["median_ns"], speedup]
        )
    if "cython" not in backends:
        print("note: compiled backend unavailable, timed fallback only", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())

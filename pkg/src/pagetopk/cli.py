"""Command line front end.

Every subcommand prints CSV (header row first, LF line endings, UTF-8) to
stdout or to ``--out``. Runs are deterministic for a fixed seed and flag
set, except for wall-clock timing columns; ``bench --reps 0`` skips timing
and emits counts only, which makes even that output reproducible.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from contextlib import nullcontext

import numpy as np

from . import __version__
from .attention import DecodeConfig, decode_step, dense_attention
from .backend import active_backend, set_backend
from .baselines import minmax_arrays, quest_scores
from .harness.bench import BENCH_TARGETS, run_bench
from .harness.gradcheck import REL_TOL, run_grad_check
from .harness.recall import RECALL_METHODS, eval_recall
from .harness.workload import WorkloadSpec, gen_workload
from .kvcache import CapacityError, PagedKvCache
from .scoring import QueryGroup, score_pages_grouped
from .select import radix_topk

DEFAULT_SIZES = "4096,8192,16384,32768"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _emit(header: list[str], rows: list[list], out: str | None) -> None:
    ctx = (
        open(out, "w", encoding="utf-8", newline="")
        if out
        else nullcontext(sys.stdout)
    )
    with ctx as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _budget_pages(args) -> int:
    return max(1, math.ceil(args.budget / args.page_size))


def _resolve_workload(args):
    """Cache plus queries, either from a snapshot or freshly generated."""
    if args.workload:
        cache = PagedKvCache.load(args.workload)
        rng = np.random.default_rng(args.seed)
        queries = rng.standard_normal(
            (args.query_heads, cache.layout.head_dim)
        ).astype(np.float32)
        return cache, queries
    spec = WorkloadSpec(
        seed=args.seed,
        n_tokens=args.n_tokens,
        head_dim=args.head_dim,
        page_size=args.page_size,
        num_query_heads=args.query_heads,
        num_kv_heads=args.kv_heads,
        key_scale=args.key_scale,
    )
    wl = gen_workload(spec)
    return wl.cache, wl.queries


def _group(queries: np.ndarray, n_kv: int, head: int) -> QueryGroup:
    group_size = queries.shape[0] // n_kv
    return QueryGroup.from_queries(
        queries[head * group_size : (head + 1) * group_size]
    )


# ---------------------------------------------------------------- commands


def cmd_stats(args) -> int:
    cache, _ = _resolve_workload(args)
    if args.save_workload:
        cache.save(args.save_workload)
    rows = []
    for head in range(cache.layout.num_kv_heads):
        for page in range(cache.num_pages(head)):
            st = cache.page_stats(head, page)
            mean_l2 = float(np.linalg.norm(st.mean.astype(np.float64)))
            rows.append([head, page, st.count, st.std, mean_l2])
    _emit(["kv_head", "page", "count", "std", "mean_l2"], rows, args.out)
    return 0


def cmd_score(args) -> int:
    cache, queries = _resolve_workload(args)
    n_kv = cache.layout.num_kv_heads
    rows = []
    for head in range(n_kv):
        group = _group(queries, n_kv, head)
        stats = cache.stats_arrays(head)
        sv = score_pages_grouped(group, stats, args.lam, head=head)
        mean_only = score_pages_grouped(group, stats, 0.0, head=head)
        mins, maxs = minmax_arrays(cache, head)
        quest = np.max(
            [quest_scores(q, mins, maxs) for q in group.queries], axis=0
        )
        for page in range(sv.scores_f32.shape[0]):
            rows.append(
                [
                    head,
                    page,
                    sv.scores_f32[page],
                    int(sv.scores_bf16[page]),
                    mean_only.scores_f32[page],
                    quest[page],
                ]
            )
    _emit(
        ["kv_head", "page", "score", "score_bf16_bits", "mean_only", "quest"],
        rows,
        args.out,
    )
    return 0


def cmd_select(args) -> int:
    cache, queries = _resolve_workload(args)
    n_kv = cache.layout.num_kv_heads
    k = _budget_pages(args)
    rows = []
    for head in range(n_kv):
        group = _group(queries, n_kv, head)
        sv = score_pages_grouped(group, cache.stats_arrays(head), args.lam, head=head)
        sel = radix_topk(sv, k, cache.table, head)
        logical = cache.table.to_logical(head, sel.physical_ids)
        for rank, (pid, lg) in enumerate(zip(sel.physical_ids, logical)):
            rows.append(
                [
                    head,
                    rank,
                    int(pid),
                    int(lg),
                    sv.scores_f32[lg],
                    sel.regime,
                    sel.passes,
                    sel.kth_score,
                    sel.kplus1_score,
                ]
            )
    _emit(
        [
            "kv_head",
            "rank",
            "physical_page",
            "logical_page",
            "score",
            "regime",
            "passes",
            "kth_score",
            "kplus1_score",
        ],
        rows,
        args.out,
    )
    return 0


def cmd_attn(args) -> int:
    cache, queries = _resolve_workload(args)
    n_kv = cache.layout.num_kv_heads
    group_size = queries.shape[0] // n_kv
    cfg = DecodeConfig(k=_budget_pages(args), lam=args.lam)
    outputs, selections = decode_step(cache, queries, cfg)
    rows = []
    for qh, out in enumerate(outputs):
        head = qh // group_size
        keys, values = cache.full_kv(head)
        dense = dense_attention(
            queries[qh], keys, values, block_size=cache.layout.page_size
        )
        err = float(np.max(np.abs(out.out - dense.out)))
        rows.append(
            [
                qh,
                head,
                len(selections[head]),
                out.lse,
                float(np.linalg.norm(out.out.astype(np.float64))),
                err,
            ]
        )
    _emit(
        ["query_head", "kv_head", "pages_selected", "lse", "out_l2", "dense_max_abs_err"],
        rows,
        args.out,
    )
    return 0


def cmd_grad_check(args) -> int:
    rows = []
    worst = 0.0
    for i in range(args.instances):
        rep = run_grad_check(args.seed + i, tau=args.tau, mode=args.mode, lam=args.lam)
        worst = max(worst, rep.max_err)
        rows.append(
            [
                i,
                rep.seed,
                rep.n_pages,
                rep.err_queries,
                rep.err_keys,
                rep.err_values,
                rep.max_err,
                "pass" if rep.passed else "fail",
            ]
        )
    _emit(
        [
            "instance",
            "seed",
            "n_pages",
            "err_queries",
            "err_keys",
            "err_values",
            "max_err",
            "status",
        ],
        rows,
        args.out,
    )
    return 0 if worst < REL_TOL else 1


def cmd_recall(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in RECALL_METHODS:
            raise ValueError(f"unknown recall method {m!r}")
    k = _budget_pages(args)
    rows = []
    sums = {m: np.zeros(3) for m in methods}
    for trial in range(args.trials):
        spec = WorkloadSpec(
            seed=args.seed + trial,
            n_tokens=args.n_tokens,
            head_dim=args.head_dim,
            page_size=args.page_size,
            key_scale=args.key_scale,
            planted_pages=args.planted,
            planted_gain=args.gain,
        )
        wl = gen_workload(spec)
        for m in methods:
            rep = eval_recall(m, wl, k, lam=args.lam)
            sums[m] += (rep.page_recall, rep.mass_recall, rep.output_err)
            rows.append(
                [
                    trial,
                    spec.seed,
                    m,
                    k,
                    rep.budget_tokens,
                    rep.page_recall,
                    rep.mass_recall,
                    rep.output_err,
                ]
            )
    for m in methods:
        mean = sums[m] / args.trials
        rows.append(["mean", "", m, k, k * args.page_size, mean[0], mean[1], mean[2]])
    _emit(
        [
            "trial",
            "seed",
            "method",
            "k_pages",
            "budget_tokens",
            "page_recall",
            "mass_recall",
            "output_err",
        ],
        rows,
        args.out,
    )
    return 0


def cmd_bench(args) -> int:
    targets = [t.strip() for t in args.targets.split(",") if t.strip()]
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    rows = run_bench(
        targets,
        sizes,
        reps=args.reps,
        seed=args.seed,
        head_dim=args.head_dim,
        num_query_heads=args.query_heads,
        num_kv_heads=args.kv_heads,
        page_size=args.page_size,
        budget_tokens=args.budget,
        lam=args.lam,
    )
    header = [
        "target",
        "backend",
        "n_tokens",
        "n_pages",
        "group_size",
        "head_dim",
        "k",
        "warmup",
        "reps",
        "median_ns",
        "scalar_reads",
        "scalar_writes",
        "launches",
        "passes",
    ]
    out_rows = [
        [
            r.target,
            r.backend,
            r.n_tokens,
            r.n_pages,
            r.group_size,
            r.head_dim,
            r.k,
            r.warmup,
            r.reps,
            r.median_ns,
            r.scalar_reads,
            r.scalar_writes,
            r.launches,
            r.passes,
        ]
        for r in rows
    ]
    _emit(header, out_rows, args.out)
    return 0


# ------------------------------------------------------------------ parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="RNG seed")
    p.add_argument(
        "--backend",
        choices=["auto", "cython", "python"],
        default=None,
        help="kernel backend (default: auto)",
    )
    p.add_argument("--out", default=None, help="write CSV here instead of stdout")
    p.add_argument(
        "--lambda",
        dest="lam",
        type=float,
        default=0.5,
        help="weight of the spread term in page scores",
    )
    p.add_argument("--budget", type=int, default=512, help="token budget for top-k")
    p.add_argument("--page-size", type=int, default=8, help="tokens per page")


def _add_workload(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workload", default=None, help="load keys/values from a snapshot")
    p.add_argument("--n-tokens", type=int, default=2048)
    p.add_argument("--head-dim", type=int, default=128)
    p.add_argument("--kv-heads", type=int, default=1)
    p.add_argument("--query-heads", type=int, default=4)
    p.add_argument("--key-scale", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pagetopk",
        description="Page-level top-k sparse attention toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="per-page summary statistics")
    _add_common(p)
    _add_workload(p)
    p.add_argument("--save-workload", default=None, help="also save a snapshot here")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("score", help="page criticality scores and baselines")
    _add_common(p)
    _add_workload(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("select", help="top-k page selection")
    _add_common(p)
    _add_workload(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("attn", help="sparse decode step vs dense attention")
    _add_common(p)
    _add_workload(p)
    p.set_defaults(func=cmd_attn)

    p = sub.add_parser("grad-check", help="finite-difference gradient check")
    _add_common(p)
    p.add_argument("--instances", type=int, default=3)
    p.add_argument("--tau", type=float, default=1.0, help="gate temperature")
    p.add_argument("--mode", choices=["soft", "hard"], default="soft")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("recall", help="page recall of scoring methods")
    _add_common(p)
    p.add_argument("--n-tokens", type=int, default=2048)
    p.add_argument("--head-dim", type=int, default=64)
    p.add_argument("--key-scale", type=float, default=1.0)
    p.add_argument("--methods", default=",".join(RECALL_METHODS))
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--planted", type=int, default=8, help="sharp pages per workload")
    p.add_argument("--gain", type=float, default=6.0, help="sharp-key alignment gain")
    p.set_defaults(func=cmd_recall)

    p = sub.add_parser("bench", help="kernel microbenchmarks")
    _add_common(p)
    p.add_argument("--head-dim", type=int, default=128)
    p.add_argument("--kv-heads", type=int, default=1)
    p.add_argument("--query-heads", type=int, default=4)
    p.add_argument("--targets", default=",".join(BENCH_TARGETS))
    p.add_argument("--sizes", default=DEFAULT_SIZES)
    p.add_argument(
        "--reps",
        type=int,
        default=None,
        help="timing iterations per target (0: counts only, no timing)",
    )
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.backend:
        set_backend(args.backend)
    else:
        active_backend()
    try:
        return args.func(args)
    except (ValueError, LookupError, CapacityError, OSError) as exc:
        print(f"pagetopk: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

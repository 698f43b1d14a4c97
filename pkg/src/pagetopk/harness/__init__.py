"""Evaluation harness: synthetic workloads, recall metrics, benchmarks."""

from .bench import BENCH_TARGETS, BenchRow, run_bench
from .recall import RecallReport, eval_recall, oracle_page_ranking
from .workload import Workload, WorkloadSpec, gen_workload

__all__ = [
    "BENCH_TARGETS",
    "BenchRow",
    "RecallReport",
    "Workload",
    "WorkloadSpec",
    "eval_recall",
    "gen_workload",
    "oracle_page_ranking",
    "run_bench",
]

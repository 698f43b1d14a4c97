"""End-to-end tests of the command line interface."""

from __future__ import annotations

import csv
import io
import subprocess
import sys

import pytest

BASE = [sys.executable, "-m", "pagetopk"]
SMALL = ["--n-tokens", "160", "--head-dim", "16"]


def run_cli(*args: str):
    return subprocess.run(
        BASE + list(args), capture_output=True, text=True, timeout=300
    )


def rows_of(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


# ---------------------------------------------------------------------------
# Output shape and content
# ---------------------------------------------------------------------------

class TestCommands:
    def test_stats_rows(self) -> None:
        out = run_cli("stats", *SMALL, "--kv-heads", "2", "--query-heads", "2")
        assert out.returncode == 0
        rows = rows_of(out.stdout)
        assert len(rows) == 40  # 20 pages per head
        assert set(rows[0]) == {"kv_head", "page", "count", "std", "mean_l2"}
        assert all(r["count"] == "8" for r in rows)

    def test_score_columns(self) -> None:
        out = run_cli("score", *SMALL)
        rows = rows_of(out.stdout)
        assert len(rows) == 20
        assert {"score", "score_bf16_bits", "mean_only", "quest"} <= set(rows[0])
        # spread weight zero collapses onto the mean-only baseline
        flat = run_cli("score", *SMALL, "--lambda", "0")
        for r in rows_of(flat.stdout):
            assert r["score"] == r["mean_only"]

    def test_select_row_count_tracks_budget(self) -> None:
        out = run_cli("select", *SMALL, "--budget", "24")
        rows = rows_of(out.stdout)
        assert len(rows) == 3  # ceil(24 / 8) pages
        assert rows[0]["regime"] == "registers"
        logical = {int(r["logical_page"]) for r in rows}
        assert len(logical) == 3

    def test_attn_full_budget_matches_dense(self) -> None:
        out = run_cli("attn", *SMALL, "--budget", "99999", "--query-heads", "2")
        rows = rows_of(out.stdout)
        assert len(rows) == 2
        assert all(float(r["dense_max_abs_err"]) < 1e-5 for r in rows)

    def test_grad_check_passes(self) -> None:
        out = run_cli("grad-check", "--instances", "2")
        assert out.returncode == 0
        rows = rows_of(out.stdout)
        assert all(r["status"] == "pass" for r in rows)
        assert all(float(r["max_err"]) < 1e-3 for r in rows)

    def test_recall_reports_methods_and_mean(self) -> None:
        out = run_cli(
            "recall", "--n-tokens", "256", "--head-dim", "32", "--trials", "2",
            "--budget", "64", "--planted", "2",
        )
        rows = rows_of(out.stdout)
        methods = {r["method"] for r in rows}
        assert methods == {"unique", "mean_only", "quest"}
        means = [r for r in rows if r["trial"] == "mean"]
        assert len(means) == 3

    def test_bench_counts_only(self) -> None:
        out = run_cli(
            "bench", "--reps", "0", "--sizes", "256,512",
            "--targets", "scoring-fused,radix-topk",
        )
        rows = rows_of(out.stdout)
        assert len(rows) == 4
        assert all(r["median_ns"] == "" for r in rows)
        fused = [r for r in rows if r["target"] == "scoring-fused"]
        assert all(r["launches"] == "1" for r in fused)


# ---------------------------------------------------------------------------
# Flags and plumbing
# ---------------------------------------------------------------------------

class TestPlumbing:
    def test_out_flag_writes_file(self, tmp_path) -> None:
        path = tmp_path / "stats.csv"
        out = run_cli("stats", *SMALL, "--out", str(path))
        assert out.returncode == 0
        assert out.stdout == ""
        text = path.read_text(encoding="utf-8")
        assert text.startswith("kv_head,page,count,std,mean_l2\n")
        assert "\r" not in text

    def test_snapshot_roundtrip_through_cli(self, tmp_path) -> None:
        snap = tmp_path / "wl.bin"
        a = run_cli("stats", *SMALL, "--save-workload", str(snap))
        b = run_cli("stats", "--workload", str(snap))
        assert a.stdout == b.stdout

    def test_backend_flag(self) -> None:
        # same pages under either backend; bytes are only pinned per backend
        a = run_cli("select", *SMALL, "--backend", "python")
        b = run_cli("select", *SMALL, "--backend", "cython")
        assert a.returncode == 0 and b.returncode == 0
        pages = lambda r: {x["logical_page"] for x in rows_of(r.stdout)}
        assert pages(a) == pages(b)
        assert a.stdout == run_cli("select", *SMALL, "--backend", "python").stdout

    def test_bad_inputs_fail_cleanly(self) -> None:
        out = run_cli("recall", "--methods", "psychic", "--trials", "1")
        assert out.returncode == 2
        assert "error" in out.stderr
        missing = run_cli("stats", "--workload", "/nonexistent/wl.bin")
        assert missing.returncode == 2

    def test_version(self) -> None:
        out = run_cli("--version")
        assert out.returncode == 0
        assert out.stdout.strip()

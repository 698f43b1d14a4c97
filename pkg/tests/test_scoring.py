"""Unit tests for page criticality scoring and traffic accounting."""

from __future__ import annotations

import numpy as np
import pytest

from pagetopk.bf16 import f32_to_bf16
from pagetopk.kvcache import compute_page_stats
from pagetopk.scoring import (
    QueryGroup,
    score_page,
    score_pages_grouped,
    score_pages_naive,
    traffic_of_fused,
    traffic_of_naive,
    traffic_write_ratio,
)

HEAD_DIM = 32
SEED = 7


def random_stats(rng, n_pages: int, head_dim: int = HEAD_DIM):
    means = rng.standard_normal((n_pages, head_dim)).astype(np.float32)
    stds = np.abs(rng.standard_normal(n_pages)).astype(np.float32)
    return means, stds


def oracle_score(q, mean, std, lam) -> float:
    q = q.astype(np.float64)
    return float(q @ mean.astype(np.float64) + lam * np.linalg.norm(q) * float(std))


# ---------------------------------------------------------------------------
# QueryGroup
# ---------------------------------------------------------------------------

class TestQueryGroup:
    def test_norms(self) -> None:
        rng = np.random.default_rng(SEED)
        q = rng.standard_normal((4, HEAD_DIM)).astype(np.float32)
        group = QueryGroup.from_queries(q)
        np.testing.assert_allclose(
            group.norms, np.linalg.norm(q.astype(np.float64), axis=1), rtol=1e-6
        )
        assert group.group_size == 4
        assert group.head_dim == HEAD_DIM

    def test_single_vector_promotes_to_group_of_one(self) -> None:
        group = QueryGroup.from_queries(np.ones(HEAD_DIM, dtype=np.float32))
        assert group.queries.shape == (1, HEAD_DIM)

    def test_rejects_bad_shapes(self) -> None:
        with pytest.raises(ValueError):
            QueryGroup.from_queries(np.zeros((0, HEAD_DIM), dtype=np.float32))
        with pytest.raises(ValueError):
            QueryGroup.from_queries(np.zeros((2, 2, 2), dtype=np.float32))


# ---------------------------------------------------------------------------
# Single-page and grouped scores
# ---------------------------------------------------------------------------

class TestScores:
    def test_score_page_formula(self) -> None:
        rng = np.random.default_rng(SEED + 1)
        for _ in range(20):
            keys = rng.standard_normal((8, HEAD_DIM)).astype(np.float32)
            q = rng.standard_normal(HEAD_DIM).astype(np.float32)
            stats = compute_page_stats(keys)
            for lam in (0.0, 0.5, 2.0):
                want = oracle_score(q, stats.mean, stats.std, lam)
                assert score_page(q, stats, lam) == pytest.approx(want, rel=1e-5)

    def test_grouped_is_group_max(self) -> None:
        rng = np.random.default_rng(SEED + 2)
        means, stds = random_stats(rng, 40)
        q = rng.standard_normal((4, HEAD_DIM)).astype(np.float32)
        group = QueryGroup.from_queries(q)
        sv = score_pages_grouped(group, (means, stds), 0.5)
        want = np.max(
            [[oracle_score(qg, means[p], stds[p], 0.5) for p in range(40)] for qg in q],
            axis=0,
        )
        np.testing.assert_allclose(sv.scores_f32, want, rtol=1e-4, atol=1e-5)

    def test_grouped_matches_naive(self) -> None:
        rng = np.random.default_rng(SEED + 3)
        for trial in range(10):
            n_pages = int(rng.integers(1, 200))
            g = int(rng.integers(1, 5))
            means, stds = random_stats(rng, n_pages)
            group = QueryGroup.from_queries(
                rng.standard_normal((g, HEAD_DIM)).astype(np.float32)
            )
            fused = score_pages_grouped(group, (means, stds), 0.5)
            naive, _ = score_pages_naive(group, (means, stds), 0.5)
            np.testing.assert_allclose(
                fused.scores_f32, naive.scores_f32, rtol=1e-5, atol=1e-6
            )

    def test_bf16_column_tracks_f32(self) -> None:
        rng = np.random.default_rng(SEED + 4)
        means, stds = random_stats(rng, 17)
        group = QueryGroup.from_queries(
            rng.standard_normal((2, HEAD_DIM)).astype(np.float32)
        )
        sv = score_pages_grouped(group, (means, stds), 0.5)
        np.testing.assert_array_equal(sv.scores_bf16, f32_to_bf16(sv.scores_f32))

    def test_stats_sequence_and_arrays_agree(self) -> None:
        rng = np.random.default_rng(SEED + 5)
        pages = [
            compute_page_stats(rng.standard_normal((8, HEAD_DIM)).astype(np.float32))
            for _ in range(6)
        ]
        means = np.stack([p.mean for p in pages])
        stds = np.array([p.std for p in pages], dtype=np.float32)
        group = QueryGroup.from_queries(
            rng.standard_normal((3, HEAD_DIM)).astype(np.float32)
        )
        a = score_pages_grouped(group, pages, 0.5)
        b = score_pages_grouped(group, (means, stds), 0.5)
        np.testing.assert_array_equal(a.scores_f32, b.scores_f32)

    def test_empty_page_list(self) -> None:
        group = QueryGroup.from_queries(np.ones((1, HEAD_DIM), dtype=np.float32))
        sv = score_pages_grouped(group, [], 0.5)
        assert sv.scores_f32.shape == (0,)
        assert len(sv) == 0


# ---------------------------------------------------------------------------
# Traffic accounting
# ---------------------------------------------------------------------------

class TestTraffic:
    def test_closed_forms(self) -> None:
        for g, p, d in ((4, 1024, 128), (1, 1, 16), (8, 37, 64)):
            fused = traffic_of_fused(g, p, d)
            naive = traffic_of_naive(g, p, d)
            assert fused.scalar_reads == g * d + p * (d + 1)
            assert fused.scalar_writes == p
            assert fused.launches == 1
            # the two group-by-page intermediates round-trip through storage
            assert naive.scalar_reads - fused.scalar_reads == 2 * g * p
            assert naive.scalar_writes - fused.scalar_writes == 2 * g * p
            assert naive.launches == 3

    def test_single_page_difference(self) -> None:
        g = 4
        fused = traffic_of_fused(g, 1, 128)
        naive = traffic_of_naive(g, 1, 128)
        assert naive.total - fused.total == 4 * g

    def test_write_ratio(self) -> None:
        for g in (1, 4, 8):
            fused = traffic_of_fused(g, 2048, 128)
            naive = traffic_of_naive(g, 2048, 128)
            assert traffic_write_ratio(naive, fused) == 2 * g + 1

    def test_naive_reports_its_own_traffic(self) -> None:
        rng = np.random.default_rng(SEED + 6)
        means, stds = random_stats(rng, 50)
        group = QueryGroup.from_queries(
            rng.standard_normal((4, HEAD_DIM)).astype(np.float32)
        )
        _, traffic = score_pages_naive(group, (means, stds), 0.5)
        assert traffic == traffic_of_naive(4, 50, HEAD_DIM)

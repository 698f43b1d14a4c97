"""Unit tests for the min/max and mean-only scoring baselines."""

from __future__ import annotations

import numpy as np
import pytest

from pagetopk.baselines import (
    compute_minmax,
    mean_only_score,
    minmax_arrays,
    quest_score,
    quest_scores,
)
from pagetopk.kvcache import CacheLayout, PagedKvCache, compute_page_stats
from pagetopk.scoring import score_page

HEAD_DIM = 12
SEED = 55


class TestMinMax:
    def test_matches_numpy(self) -> None:
        rng = np.random.default_rng(SEED)
        keys = rng.standard_normal((8, HEAD_DIM)).astype(np.float32)
        stats = compute_minmax(keys)
        np.testing.assert_array_equal(stats.min, keys.min(axis=0))
        np.testing.assert_array_equal(stats.max, keys.max(axis=0))

    def test_rejects_empty(self) -> None:
        with pytest.raises(ValueError):
            compute_minmax(np.empty((0, HEAD_DIM), dtype=np.float32))


class TestQuestScore:
    def test_formula(self) -> None:
        rng = np.random.default_rng(SEED + 1)
        keys = rng.standard_normal((8, HEAD_DIM)).astype(np.float32)
        q = rng.standard_normal(HEAD_DIM).astype(np.float32)
        stats = compute_minmax(keys)
        want = float(
            np.sum(np.maximum(q * stats.min, q * stats.max), dtype=np.float64)
        )
        assert quest_score(q, stats) == pytest.approx(want, rel=1e-6)

    def test_upper_bounds_every_row_logit(self) -> None:
        # per-dim max over the page box dominates any actual key in the page
        rng = np.random.default_rng(SEED + 2)
        for _ in range(25):
            keys = rng.standard_normal((6, HEAD_DIM)).astype(np.float32)
            q = rng.standard_normal(HEAD_DIM).astype(np.float32)
            bound = quest_score(q, compute_minmax(keys))
            logits = keys.astype(np.float64) @ q.astype(np.float64)
            assert bound >= logits.max() - 1e-5

    def test_vectorized_matches_scalar(self) -> None:
        rng = np.random.default_rng(SEED + 3)
        pages = [
            rng.standard_normal((8, HEAD_DIM)).astype(np.float32) for _ in range(7)
        ]
        q = rng.standard_normal(HEAD_DIM).astype(np.float32)
        mins = np.stack([p.min(axis=0) for p in pages])
        maxs = np.stack([p.max(axis=0) for p in pages])
        got = quest_scores(q, mins, maxs)
        want = [quest_score(q, compute_minmax(p)) for p in pages]
        np.testing.assert_allclose(got, want, rtol=1e-6)

    def test_minmax_arrays_from_cache(self) -> None:
        rng = np.random.default_rng(SEED + 4)
        layout = CacheLayout(num_kv_heads=1, head_dim=HEAD_DIM, page_size=4, max_pages=8)
        cache = PagedKvCache(layout)
        keys = rng.standard_normal((11, HEAD_DIM)).astype(np.float32)
        cache.extend(0, keys, keys)
        mins, maxs = minmax_arrays(cache, 0)
        assert mins.shape == (3, HEAD_DIM)
        np.testing.assert_array_equal(mins[2], keys[8:].min(axis=0))
        np.testing.assert_array_equal(maxs[0], keys[:4].max(axis=0))


class TestMeanOnly:
    def test_equals_zero_spread_weight(self) -> None:
        rng = np.random.default_rng(SEED + 5)
        keys = rng.standard_normal((8, HEAD_DIM)).astype(np.float32)
        q = rng.standard_normal(HEAD_DIM).astype(np.float32)
        stats = compute_page_stats(keys)
        assert mean_only_score(q, stats) == score_page(q, stats, 0.0)
        assert mean_only_score(q, stats) != score_page(q, stats, 0.5)

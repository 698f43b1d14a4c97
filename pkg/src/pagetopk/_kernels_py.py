"""Numpy fallback kernels.

Same contracts as the compiled module in ``_kernels_cy.pyx``. The compiled
kernels make the single-pass / bounded-pass structure literal; these
fallbacks reproduce the results with vectorized numpy and are the import-time
substitute when the extension is unavailable.
"""

from __future__ import annotations

import math

import numpy as np

NAME = "python"


def fused_scores(
    queries: np.ndarray,
    norms: np.ndarray,
    means: np.ndarray,
    stds: np.ndarray,
    lam: float,
) -> np.ndarray:
    """Group-max criticality scores, one f32 score per page."""
    raw = queries @ means.T
    raw += np.float32(lam) * norms[:, None] * stds[None, :]
    return np.max(raw, axis=0) if raw.shape[0] > 1 else raw[0].copy()


def radix_select_desc(keys: np.ndarray, k: int) -> tuple[np.ndarray, int, int, int]:
    """Pick the k largest of P uint16 keys, lowest index winning ties.

    Two-round byte histogram: locate the high-byte bucket holding the k-th
    key, then the low byte within that bucket. Returns (indices, kth key,
    next key below the cut or -1, traversal phases). Caller guarantees
    1 <= k < len(keys).
    """
    n = keys.shape[0]
    # Phase 1: high-byte histogram.
    hist_hi = np.bincount(keys >> 8, minlength=256)
    cum = np.cumsum(hist_hi[::-1])[::-1]  # cum[b] = count of keys with high byte >= b
    hi = int(np.max(np.nonzero(cum >= k)[0]))
    above = int(cum[hi + 1]) if hi < 255 else 0
    need = k - above

    # Phase 2: classify against the hi bucket, histogram its low bytes.
    high = keys >> 8
    bucket = high == np.uint16(hi)
    hist_lo = np.bincount(keys[bucket] & np.uint16(0xFF), minlength=256)
    cum_lo = np.cumsum(hist_lo[::-1])[::-1]
    lo = int(np.max(np.nonzero(cum_lo >= need)[0]))
    above2 = int(cum_lo[lo + 1]) if lo < 255 else 0
    tie_budget = need - above2
    leftover = int(hist_lo[lo]) - tie_budget
    threshold = (hi << 8) | lo

    # Phase 3: emit ids above the threshold plus tie winners by lowest index.
    gt_idx = np.flatnonzero(keys > np.uint16(threshold))
    tie_idx = np.flatnonzero(keys == np.uint16(threshold))[:tie_budget]
    ids = np.concatenate([gt_idx, tie_idx]).astype(np.int64)

    if leftover > 0:
        kplus1 = threshold
    else:
        below = keys[keys < np.uint16(threshold)]
        kplus1 = int(below.max())
    return ids, threshold, kplus1, 3


def stream_attention(
    q: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    scale: float,
    block: int,
    block_bias: np.ndarray,
) -> tuple[np.ndarray, float]:
    """Streaming softmax attention with running-max rescaling.

    block_bias holds one additive logit bias per block of ``block`` rows.
    Blocks are batched into larger chunks here; the compiled kernel walks
    them one by one.
    """
    n, dim = keys.shape
    row_bias = np.repeat(block_bias.astype(np.float32), block)[:n]
    chunk = block * max(1, 4096 // block)
    scale32 = np.float32(scale)

    m = np.float32(-np.inf)
    l = np.float32(0.0)
    acc = np.zeros(dim, dtype=np.float32)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        logits = keys[start:stop] @ q
        logits = logits * scale32 + row_bias[start:stop]
        m_new = np.maximum(m, np.float32(logits.max()))
        carry = np.exp(m - m_new)
        w = np.exp(logits - m_new)
        l = l * carry + np.float32(w.sum(dtype=np.float32))
        acc = acc * carry + w @ values[start:stop]
        m = m_new
    out = acc / l
    lse = float(m) + math.log(float(l))
    return out, lse

"""Top-k page selection over bf16 scores.

bf16 scores are first mapped to uint16 keys whose unsigned order matches
the float order: a set sign bit means the value was negative, so all 16
bits are inverted; otherwise the sign bit is set. The map is a bijection on
non-NaN patterns and strictly order-preserving (signed zeros order as
-0.0 < +0.0, which is harmless for selection). NaN scores are rejected.

Selection runs a two-round 8-bit radix pick over those keys: a 256-bin
histogram of high bytes locates the bucket holding the k-th largest key,
a second histogram of that bucket's low bytes pins the threshold, and ties
at the threshold are resolved to the lowest logical page index. The result
ids are translated logical -> physical through the page table here, so
callers hand physical ids straight to the gather.

Regimes are labels for reporting parity with the sizes a GPU kernel would
switch strategies at: "registers" up to 4096 pages, "staged" up to ~23K,
beyond that the partial-sort fallback takes over. The fallback doubles as
the testing oracle for the radix path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import active_backend
from .bf16 import bf16_to_f32, is_nan_bf16
from .kvcache import PageTable
from .scoring import ScoreVector

REGISTER_MAX_PAGES = 4096
STAGED_MAX_PAGES = 23 * 1024


@dataclass
class TopKSelection:
    """Selected pages of one head; ids are physical and unordered."""

    physical_ids: np.ndarray  # (k,) int64
    kth_score: float  # bf16 value of the k-th largest score
    kplus1_score: float | None  # bf16 value just below the cut; None when P <= k
    regime: str  # "registers" | "staged" | "fallback"
    passes: int | None  # full-traversal phases of the radix pick; None for sorts

    def __len__(self) -> int:
        return self.physical_ids.shape[0]


def encode_ordered(bits: np.ndarray) -> np.ndarray:
    """Map bf16 bit patterns to order-preserving uint16 keys."""
    arr = np.asarray(bits, dtype=np.uint16)
    if np.any(is_nan_bf16(arr)):
        raise ValueError("cannot order NaN scores")
    negative = (arr & np.uint16(0x8000)) != 0
    return np.where(negative, ~arr, arr | np.uint16(0x8000))


def decode_ordered(keys: np.ndarray) -> np.ndarray:
    """Inverse of :func:`encode_ordered`."""
    arr = np.asarray(keys, dtype=np.uint16)
    was_negative = (arr & np.uint16(0x8000)) == 0
    return np.where(was_negative, ~arr, arr & np.uint16(0x7FFF))


def _regime(n_pages: int) -> str:
    if n_pages <= REGISTER_MAX_PAGES:
        return "registers"
    if n_pages <= STAGED_MAX_PAGES:
        return "staged"
    return "fallback"


def _take_all(keys: np.ndarray, table: PageTable, head: int) -> TopKSelection:
    mapping = table.mapping(head)
    kth = float(bf16_to_f32(decode_ordered(np.uint16(keys.min()))))
    return TopKSelection(
        physical_ids=mapping.copy(),
        kth_score=kth,
        kplus1_score=None,
        regime=_regime(keys.shape[0]),
        passes=1,
    )


def radix_topk(scores: ScoreVector, k: int, table: PageTable, head: int) -> TopKSelection:
    """Select the k highest-scoring pages with the two-round radix pick.

    Performs at most two full passes over the keys plus one pass over the
    boundary bucket. If P <= k every page is returned. Beyond the staged
    regime the partial-sort fallback is used instead.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    keys = encode_ordered(scores.scores_bf16)
    n_pages = keys.shape[0]
    if n_pages == 0:
        raise ValueError("no pages to select from")
    if n_pages <= k:
        return _take_all(keys, table, head)
    if n_pages > STAGED_MAX_PAGES:
        return topk_fallback(scores, k, table, head)

    ids, kth_key, kplus1_key, passes = active_backend().radix_select_desc(
        np.ascontiguousarray(keys), k
    )
    mapping = table.mapping(head)
    return TopKSelection(
        physical_ids=mapping[ids],
        kth_score=float(bf16_to_f32(decode_ordered(np.uint16(kth_key)))),
        kplus1_score=float(bf16_to_f32(decode_ordered(np.uint16(kplus1_key)))),
        regime=_regime(n_pages),
        passes=int(passes),
    )


def topk_fallback(scores: ScoreVector, k: int, table: PageTable, head: int) -> TopKSelection:
    """Partial-sort selection with the same tie policy as the radix pick.

    Stable sort on descending keys, so equal scores keep ascending logical
    index order. Serves as the oracle for :func:`radix_topk` and as the
    selection path past the staged-regime size.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    keys = encode_ordered(scores.scores_bf16)
    n_pages = keys.shape[0]
    if n_pages == 0:
        raise ValueError("no pages to select from")
    if n_pages <= k:
        sel = _take_all(keys, table, head)
        return TopKSelection(
            physical_ids=sel.physical_ids,
            kth_score=sel.kth_score,
            kplus1_score=None,
            regime="fallback" if n_pages > STAGED_MAX_PAGES else sel.regime,
            passes=None,
        )
    order = np.argsort(np.uint16(0xFFFF) - keys, kind="stable")
    mapping = table.mapping(head)
    kth = float(bf16_to_f32(decode_ordered(keys[order[k - 1]])))
    kplus1 = float(bf16_to_f32(decode_ordered(keys[order[k]])))
    return TopKSelection(
        physical_ids=mapping[order[:k]],
        kth_score=kth,
        kplus1_score=kplus1,
        regime="fallback",
        passes=None,
    )

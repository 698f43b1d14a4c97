"""Page-level top-k sparse attention with paged KV caching.

The decode path scores whole pages of cached keys from running summary
statistics, keeps the top-k pages under a token budget, and attends only
over those. A compiled kernel backend accelerates the three hot loops;
a pure NumPy backend computes the same results everywhere.
"""

from .attention import (
    AttentionOutput,
    DecodeConfig,
    decode_step,
    dense_attention,
    sparse_attention,
)
from .backend import active_backend, available_backends, backend_name, set_backend
from .baselines import MinMaxStats, compute_minmax, mean_only_score, quest_score
from .bf16 import bf16_to_f32, f32_to_bf16, round_f32_to_bf16_value
from .kvcache import (
    CacheLayout,
    CapacityError,
    PagedKvCache,
    PageStats,
    PageTable,
    compute_page_stats,
)
from .scoring import (
    QueryGroup,
    ScoreVector,
    TrafficReport,
    score_page,
    score_pages_grouped,
    score_pages_naive,
    traffic_of_fused,
    traffic_of_naive,
    traffic_write_ratio,
)
from .select import (
    TopKSelection,
    decode_ordered,
    encode_ordered,
    radix_topk,
    topk_fallback,
)
from .softmask import (
    GateConfig,
    GateGradients,
    GateTape,
    GatedOutput,
    boundary,
    decode_train_loss,
    decode_train_step,
    gate_pipeline,
    gated_attention_backward,
    gated_attention_forward,
    hard_mask,
    soft_gate,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionOutput",
    "CacheLayout",
    "CapacityError",
    "DecodeConfig",
    "GateConfig",
    "GateGradients",
    "GateTape",
    "GatedOutput",
    "MinMaxStats",
    "PageStats",
    "PageTable",
    "PagedKvCache",
    "QueryGroup",
    "ScoreVector",
    "TopKSelection",
    "TrafficReport",
    "active_backend",
    "available_backends",
    "backend_name",
    "bf16_to_f32",
    "boundary",
    "compute_minmax",
    "compute_page_stats",
    "decode_ordered",
    "decode_step",
    "decode_train_loss",
    "decode_train_step",
    "dense_attention",
    "encode_ordered",
    "f32_to_bf16",
    "gate_pipeline",
    "gated_attention_backward",
    "gated_attention_forward",
    "hard_mask",
    "mean_only_score",
    "quest_score",
    "radix_topk",
    "round_f32_to_bf16_value",
    "score_page",
    "score_pages_grouped",
    "score_pages_naive",
    "set_backend",
    "soft_gate",
    "sparse_attention",
    "topk_fallback",
    "traffic_of_fused",
    "traffic_of_naive",
    "traffic_write_ratio",
    "__version__",
]

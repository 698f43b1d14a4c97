"""Finite-difference validation of the training-path gradients.

Central differences with step h in float64 probe the same map the backward
pass differentiates: the detached constants (boundary, temperature, query
norms) are replayed frozen, because the training step treats them as
constants. Toy instances keep the probe cheap and well away from exact
score ties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..kvcache import CacheLayout, PagedKvCache
from ..softmask import (
    FrozenConstants,
    GateConfig,
    decode_train_loss,
    decode_train_step,
)

FD_STEP = 1e-4
REL_TOL = 1e-3


def max_rel_err(analytic: np.ndarray, estimate: np.ndarray, floor: float = 1e-6) -> float:
    """Worst relative disagreement, with a floor so zeros compare sanely."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    b = np.asarray(estimate, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / denom))


def build_cache(
    keys_per_head: list[np.ndarray], values_per_head: list[np.ndarray], page_size: int
) -> PagedKvCache:
    head_dim = keys_per_head[0].shape[1]
    n_pages = sum(-(-k.shape[0] // page_size) for k in keys_per_head)
    layout = CacheLayout(
        num_kv_heads=len(keys_per_head),
        head_dim=head_dim,
        page_size=page_size,
        max_pages=n_pages,
    )
    cache = PagedKvCache(layout)
    for head, (keys, values) in enumerate(zip(keys_per_head, values_per_head)):
        cache.extend(head, keys.astype(np.float32), values.astype(np.float32))
    return cache


@dataclass
class ToyInstance:
    keys: list[np.ndarray]  # per KV head, (seq_len, head_dim) f64
    values: list[np.ndarray]
    queries: np.ndarray  # (num_query_heads, head_dim) f64
    target: np.ndarray
    page_size: int
    cfg: GateConfig
    lam: float


def make_toy_instance(
    seed: int,
    num_query_heads: int = 2,
    num_kv_heads: int = 1,
    n_pages: int = 5,
    page_size: int = 4,
    head_dim: int = 8,
    k: int = 2,
    tau: float = 1.0,
    mode: str = "soft",
    lam: float = 0.5,
) -> ToyInstance:
    rng = np.random.default_rng(seed)
    n_tokens = n_pages * page_size
    keys = [rng.standard_normal((n_tokens, head_dim)) for _ in range(num_kv_heads)]
    values = [rng.standard_normal((n_tokens, head_dim)) for _ in range(num_kv_heads)]
    queries = rng.standard_normal((num_query_heads, head_dim))
    target = rng.standard_normal((num_query_heads, head_dim))
    cfg = GateConfig(k=k, tau=tau, mode=mode)
    return ToyInstance(
        keys=keys,
        values=values,
        queries=queries,
        target=target,
        page_size=page_size,
        cfg=cfg,
        lam=lam,
    )


def _loss(inst: ToyInstance, frozen: FrozenConstants) -> float:
    cache = build_cache(inst.keys, inst.values, inst.page_size)
    return decode_train_loss(
        cache, inst.queries, inst.cfg, inst.target, lam=inst.lam, frozen=frozen
    )


def _fd_array(
    inst: ToyInstance, frozen: FrozenConstants, arr: np.ndarray, h: float
) -> np.ndarray:
    # Probe points are snapped to exact float32 values and the difference
    # quotient uses the span actually applied; otherwise the float32 cache
    # storage perturbs h itself and caps the achievable FD accuracy.
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.shape[0]):
        orig = flat[i]
        up_x = float(np.float32(orig + h))
        down_x = float(np.float32(orig - h))
        flat[i] = up_x
        up = _loss(inst, frozen)
        flat[i] = down_x
        down = _loss(inst, frozen)
        flat[i] = orig
        gflat[i] = (up - down) / (up_x - down_x)
    return grad


@dataclass
class GradCheckReport:
    seed: int
    n_pages: int
    err_queries: float
    err_keys: float
    err_values: float

    @property
    def max_err(self) -> float:
        return max(self.err_queries, self.err_keys, self.err_values)

    @property
    def passed(self) -> bool:
        return self.max_err < REL_TOL


def run_grad_check(seed: int, h: float = FD_STEP, **instance_kw) -> GradCheckReport:
    """Compare one toy instance's analytic gradients to central differences.

    Note: float32 storage in the cache quantizes the keys/values, so the
    instance arrays are pre-rounded to f32 values to keep the probe exact.
    """
    inst = make_toy_instance(seed, **instance_kw)
    inst.keys = [k.astype(np.float32).astype(np.float64) for k in inst.keys]
    inst.values = [v.astype(np.float32).astype(np.float64) for v in inst.values]

    cache = build_cache(inst.keys, inst.values, inst.page_size)
    result = decode_train_step(
        cache, inst.queries, inst.cfg, inst.target, lam=inst.lam
    )
    frozen = result.frozen

    fd_queries = _fd_array(inst, frozen, inst.queries, h)
    err_q = max_rel_err(result.d_queries, fd_queries)
    err_k = 0.0
    err_v = 0.0
    for head in range(len(inst.keys)):
        fd_keys = _fd_array(inst, frozen, inst.keys[head], h)
        fd_values = _fd_array(inst, frozen, inst.values[head], h)
        err_k = max(err_k, max_rel_err(result.d_keys[head], fd_keys))
        err_v = max(err_v, max_rel_err(result.d_values[head], fd_values))
    return GradCheckReport(
        seed=seed,
        n_pages=cache.num_pages(0),
        err_queries=err_q,
        err_keys=err_k,
        err_values=err_v,
    )

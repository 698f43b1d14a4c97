"""Differentiable page gating for training the criticality scorer.

At train time every page takes part in attention, weighted by a sigmoid
gate on its criticality score relative to a selection boundary. The
boundary sits halfway between the k-th and (k+1)-th score and is treated
as a constant by the backward pass (stop-gradient), as is the query norm
inside the score's spread term. The gate enters the softmax as an additive
log-bias, so the usual attention backward applies and the gradient reaching
each score is exactly

    d_scores_p = dL/dg_p * g_p * (1 - g_p) / tau.

With scores standardized by their per-query standard deviation, tau = 1 is
a usable default and the effective temperature is tau * std(scores); the
standardization scale is also held constant by backward.

Hard mode replaces the sigmoid with a binary top-k mask (ties to the lower
page index), skips masked pages entirely, and defines d_scores = 0.

Everything here runs in float64: this is the training-fidelity reference,
not the decode hot path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kvcache import PagedKvCache

# smallest gate the pipeline emits; log(GATE_FLOOR) is a finite bias of
# about -691, far below any attainable logit, so the page carries no weight
GATE_FLOOR = 1e-300


@dataclass(frozen=True)
class GateConfig:
    """Gating knobs: page budget, temperature, mode, score standardization."""

    k: int = 64
    tau: float = 1.0
    mode: str = "soft"  # "soft" | "hard"
    standardize: bool = True

    def __post_init__(self) -> None:
        if self.mode not in ("soft", "hard"):
            raise ValueError(f"unknown gate mode {self.mode!r}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.k < 1:
            raise ValueError("k must be at least 1")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def boundary(scores: np.ndarray, k: int) -> float:
    """Midpoint between the k-th and (k+1)-th largest score."""
    s = np.asarray(scores, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be at least 1")
    if s.shape[0] <= k:
        raise ValueError("boundary undefined: need more than k scores")
    top = np.sort(s)[::-1]
    return float(0.5 * (top[k - 1] + top[k]))


def soft_gate(scores: np.ndarray, theta: float, tau: float) -> np.ndarray:
    """Sigmoid gates sigma((s - theta) / tau), elementwise."""
    s = np.asarray(scores, dtype=np.float64)
    return _sigmoid((s - theta) / tau)


def gate_derivative(scores: np.ndarray, theta: float, tau: float) -> np.ndarray:
    """d gate / d score: g (1 - g) / tau, maximal (1 / 4 tau) at the boundary."""
    g = soft_gate(scores, theta, tau)
    return g * (1.0 - g) / tau


def hard_mask(scores: np.ndarray, k: int) -> np.ndarray:
    """Binary top-k mask; ties go to the lower page index."""
    s = np.asarray(scores, dtype=np.float64)
    gates = np.zeros(s.shape[0], dtype=np.float64)
    if s.shape[0] <= k:
        gates[:] = 1.0
        return gates
    order = np.argsort(-s, kind="stable")
    gates[order[:k]] = 1.0
    return gates


def effective_tau(scores: np.ndarray, cfg: GateConfig) -> float:
    """Temperature after score standardization (constant under backward)."""
    if not cfg.standardize:
        return cfg.tau
    sigma = float(np.std(np.asarray(scores, dtype=np.float64)))
    return cfg.tau * sigma if sigma > 0.0 else cfg.tau


def gate_pipeline(
    scores: np.ndarray,
    cfg: GateConfig,
    theta: float | None = None,
    tau_eff: float | None = None,
) -> tuple[np.ndarray, float | None, float]:
    """Scores -> gates, handling the everything-fits case.

    Returns (gates, theta, tau_eff). With P <= k all gates are one and no
    gradient reaches the scores. ``theta`` / ``tau_eff`` inject previously
    computed constants (they are detached, so replays must reuse them).
    """
    s = np.asarray(scores, dtype=np.float64)
    n_pages = s.shape[0]
    if cfg.mode == "hard":
        return hard_mask(s, cfg.k), None, cfg.tau
    if n_pages <= cfg.k:
        return np.ones(n_pages, dtype=np.float64), None, cfg.tau
    if tau_eff is None:
        tau_eff = effective_tau(s, cfg)
    if theta is None:
        theta = boundary(s, cfg.k)
    # the sigmoid saturates to exactly 0.0 for strongly excluded pages at
    # small tau; floor it so the gates always satisfy the soft forward's
    # (0, 1] contract (a floored gate is still a numeric zero in the softmax)
    gates = np.maximum(soft_gate(s, theta, tau_eff), GATE_FLOOR)
    return gates, theta, tau_eff


@dataclass
class GateTape:
    """Saved forward state for the exact backward pass."""

    q: np.ndarray  # (head_dim,) f64
    page_keys: list[np.ndarray]  # per page (count, head_dim) f64
    page_values: list[np.ndarray]
    gates: np.ndarray  # (n_pages,) f64
    scale: float
    tau_eff: float
    mode: str
    theta: float | None
    scores: np.ndarray | None
    lse: float = 0.0
    out: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class GatedOutput:
    out: np.ndarray  # (head_dim,) f64
    lse: float


@dataclass
class GateGradients:
    """Gradients from one gated-attention backward."""

    d_q: np.ndarray
    d_keys: list[np.ndarray]
    d_values: list[np.ndarray]
    d_gates: np.ndarray
    d_scores: np.ndarray  # via the gate only; zeros in hard mode


def gated_attention_forward(
    q: np.ndarray,
    page_keys: Sequence[np.ndarray],
    page_values: Sequence[np.ndarray],
    gates: np.ndarray,
    scale: float | None = None,
    mode: str = "soft",
    tau_eff: float = 1.0,
    theta: float | None = None,
    scores: np.ndarray | None = None,
) -> tuple[GatedOutput, GateTape]:
    """Attention over all pages with per-page additive log-gate bias.

    Softmax and value reduction stream block-wise per page; only the P-sized
    gate vector exists as mask state. Soft mode requires gates in (0, 1];
    hard mode requires binary gates and skips the zero pages.
    """
    q64 = np.asarray(q, dtype=np.float64)
    gates = np.asarray(gates, dtype=np.float64)
    if len(page_keys) != gates.shape[0] or len(page_values) != gates.shape[0]:
        raise ValueError("one gate per page required")
    if gates.shape[0] == 0:
        raise ValueError("attention over an empty context is undefined")
    if mode == "soft":
        if np.any(gates <= 0.0) or np.any(gates > 1.0):
            raise ValueError("soft gates must lie in (0, 1]")
    elif mode == "hard":
        if not np.all((gates == 0.0) | (gates == 1.0)):
            raise ValueError("hard gates must be binary")
        if not np.any(gates == 1.0):
            raise ValueError("hard mask keeps no pages")
    else:
        raise ValueError(f"unknown gate mode {mode!r}")
    if scale is None:
        scale = 1.0 / math.sqrt(page_keys[0].shape[1])

    keys64 = [np.asarray(kp, dtype=np.float64) for kp in page_keys]
    values64 = [np.asarray(vp, dtype=np.float64) for vp in page_values]
    dim = keys64[0].shape[1]
    m = -np.inf
    l = 0.0
    acc = np.zeros(dim, dtype=np.float64)
    for p, g in enumerate(gates):
        if g == 0.0:
            continue
        z = keys64[p] @ q64 * scale + math.log(g)
        m_new = max(m, float(z.max()))
        carry = math.exp(m - m_new)
        w = np.exp(z - m_new)
        l = l * carry + float(w.sum())
        acc = acc * carry + w @ values64[p]
        m = m_new
    out = acc / l
    lse = m + math.log(l)
    tape = GateTape(
        q=q64,
        page_keys=keys64,
        page_values=values64,
        gates=gates,
        scale=float(scale),
        tau_eff=float(tau_eff),
        mode=mode,
        theta=theta,
        scores=None if scores is None else np.asarray(scores, dtype=np.float64),
        lse=lse,
        out=out,
    )
    return GatedOutput(out=out, lse=lse), tape


def gated_attention_backward(tape: GateTape, d_out: np.ndarray) -> GateGradients:
    """Exact gradients of the gated forward.

    Per-page logits are recomputed from the tape (flash-style) rather than
    stored. The boundary and the effective temperature are constants here,
    so d_scores carries only the direct sigmoid term; hard mode returns
    d_scores = 0.
    """
    d_out = np.asarray(d_out, dtype=np.float64)
    n_pages = tape.gates.shape[0]
    d_q = np.zeros_like(tape.q)
    d_keys = [np.zeros_like(kp) for kp in tape.page_keys]
    d_values = [np.zeros_like(vp) for vp in tape.page_values]
    d_gates = np.zeros(n_pages, dtype=np.float64)
    s_dot = float(d_out @ tape.out)
    for p, g in enumerate(tape.gates):
        if g == 0.0:
            continue
        kp = tape.page_keys[p]
        vp = tape.page_values[p]
        z = kp @ tape.q * tape.scale + math.log(g)
        w = np.exp(z - tape.lse)
        d_z = w * (vp @ d_out - s_dot)
        d_values[p] = np.outer(w, d_out)
        d_q += tape.scale * (d_z @ kp)
        d_keys[p] = tape.scale * np.outer(d_z, tape.q)
        d_gates[p] = float(d_z.sum()) / g
    if tape.mode == "hard":
        d_scores = np.zeros(n_pages, dtype=np.float64)
        d_gates = np.zeros(n_pages, dtype=np.float64)
    else:
        d_scores = d_gates * tape.gates * (1.0 - tape.gates) / tape.tau_eff
    return GateGradients(
        d_q=d_q, d_keys=d_keys, d_values=d_values, d_gates=d_gates, d_scores=d_scores
    )


# ----------------------------------------------------------------------
# End-to-end training step


@dataclass
class FrozenConstants:
    """Stop-gradient values of one step, for replaying the same forward."""

    thetas: list[float | None]
    tau_effs: list[float]
    norms: list[np.ndarray]  # per KV head, (group,) f64


@dataclass
class TrainStepResult:
    outputs: list[GatedOutput]  # per query head
    loss: float
    d_queries: np.ndarray  # (num_query_heads, head_dim) f64
    d_keys: list[np.ndarray]  # per KV head, (seq_len, head_dim) f64
    d_values: list[np.ndarray]
    d_scores: list[np.ndarray]  # per KV head, (n_pages,) f64
    d_means: list[np.ndarray]  # per KV head, (n_pages, head_dim) f64
    d_stds: list[np.ndarray]  # per KV head, (n_pages,) f64
    gates: list[np.ndarray]
    frozen: FrozenConstants


def _head_pages_f64(cache: PagedKvCache, head: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    n_pages = cache.num_pages(head)
    keys = [cache.page_keys(head, p).astype(np.float64) for p in range(n_pages)]
    values = [cache.page_values(head, p).astype(np.float64) for p in range(n_pages)]
    return keys, values


def _page_stats_f64(page_keys: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    means = np.stack([kp.mean(axis=0) for kp in page_keys])
    stds = np.array(
        [math.sqrt(float(np.mean((kp - kp.mean(axis=0)) ** 2, axis=0).sum())) for kp in page_keys]
    )
    counts = np.array([kp.shape[0] for kp in page_keys], dtype=np.int64)
    return means, stds, counts


def _train_forward(
    cache: PagedKvCache,
    queries: np.ndarray,
    cfg: GateConfig,
    lam: float,
    target: np.ndarray,
    scale: float | None,
    frozen: FrozenConstants | None,
):
    queries64 = np.asarray(queries, dtype=np.float64)
    target64 = np.asarray(target, dtype=np.float64)
    n_heads = queries64.shape[0]
    n_kv = cache.layout.num_kv_heads
    if n_heads % n_kv != 0:
        raise ValueError(f"{n_heads} query heads not divisible by {n_kv} KV heads")
    if target64.shape != queries64.shape[:1] + (cache.layout.head_dim,):
        raise ValueError("target must be (num_query_heads, head_dim)")
    group_size = n_heads // n_kv
    if scale is None:
        scale = 1.0 / math.sqrt(cache.layout.head_dim)

    per_head = []
    loss = 0.0
    for head in range(n_kv):
        q_grp = queries64[head * group_size : (head + 1) * group_size]
        page_keys, page_values = _head_pages_f64(cache, head)
        means, stds, counts = _page_stats_f64(page_keys)
        # None entries inside a FrozenConstants mean "recompute", so a probe
        # can pin the boundary while leaving the norms live or vice versa.
        norms = (
            frozen.norms[head]
            if frozen is not None and frozen.norms[head] is not None
            else np.sqrt(np.sum(q_grp**2, axis=1))
        )
        score_mat = q_grp @ means.T + lam * norms[:, None] * stds[None, :]
        argmax_head = np.argmax(score_mat, axis=0)  # first max: lowest head wins ties
        scores = score_mat[argmax_head, np.arange(score_mat.shape[1])]
        gates, theta, tau_eff = gate_pipeline(
            scores,
            cfg,
            theta=frozen.thetas[head] if frozen is not None else None,
            tau_eff=frozen.tau_effs[head] if frozen is not None else None,
        )
        tapes = []
        outputs = []
        for g in range(group_size):
            out, tape = gated_attention_forward(
                q_grp[g],
                page_keys,
                page_values,
                gates,
                scale=scale,
                mode=cfg.mode,
                tau_eff=tau_eff,
                theta=theta,
                scores=scores,
            )
            outputs.append(out)
            diff = out.out - target64[head * group_size + g]
            loss += float(diff @ diff)
            tapes.append(tape)
        per_head.append(
            {
                "page_keys": page_keys,
                "means": means,
                "stds": stds,
                "counts": counts,
                "norms": np.asarray(norms, dtype=np.float64),
                "scores": scores,
                "argmax_head": argmax_head,
                "gates": gates,
                "theta": theta,
                "tau_eff": tau_eff,
                "tapes": tapes,
                "outputs": outputs,
            }
        )
    return per_head, loss, group_size, float(scale)


def decode_train_loss(
    cache: PagedKvCache,
    queries: np.ndarray,
    cfg: GateConfig,
    target: np.ndarray,
    lam: float = 0.5,
    scale: float | None = None,
    frozen: FrozenConstants | None = None,
) -> float:
    """Squared-error training loss of one gated decode step.

    With ``frozen`` the detached constants (boundary, temperature, query
    norms) are pinned to previously computed values, which is what a
    finite-difference probe of the training map must do.
    """
    _, loss, _, _ = _train_forward(cache, queries, cfg, lam, target, scale, frozen)
    return loss


def decode_train_step(
    cache: PagedKvCache,
    queries: np.ndarray,
    cfg: GateConfig,
    target: np.ndarray,
    lam: float = 0.5,
    scale: float | None = None,
) -> TrainStepResult:
    """Gated decode step plus exact gradients of the squared-error loss.

    Gradients flow through the attention logits and, in soft mode, through
    the gates back into the criticality scores: the max over the query
    group routes each page's score gradient to the winning head
    (``d_q += d_scores_p * mean_p``, ``d_mean_p = d_scores_p * q``), and the
    spread term forwards ``d_std_p = d_scores_p * lam * ||q||`` with the
    norm itself detached. Mean and spread gradients continue to the raw
    keys. Boundary and temperature are detached; with P <= k all gates are
    one and d_scores is zero.
    """
    per_head, loss, group_size, scale_v = _train_forward(
        cache, queries, cfg, lam, target, scale, None
    )
    queries64 = np.asarray(queries, dtype=np.float64)
    target64 = np.asarray(target, dtype=np.float64)
    n_kv = cache.layout.num_kv_heads

    d_queries = np.zeros_like(queries64)
    d_keys_out: list[np.ndarray] = []
    d_values_out: list[np.ndarray] = []
    d_scores_out: list[np.ndarray] = []
    d_means_out: list[np.ndarray] = []
    d_stds_out: list[np.ndarray] = []
    outputs: list[GatedOutput] = []
    gates_out: list[np.ndarray] = []

    for head in range(n_kv):
        st = per_head[head]
        page_keys = st["page_keys"]
        counts = st["counts"]
        n_pages = len(page_keys)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        d_keys = np.zeros((int(offsets[-1]), cache.layout.head_dim), dtype=np.float64)
        d_values = np.zeros_like(d_keys)
        d_gates_total = np.zeros(n_pages, dtype=np.float64)

        for g in range(group_size):
            qi = head * group_size + g
            out = st["outputs"][g]
            outputs.append(out)
            d_out = 2.0 * (out.out - target64[qi])
            grads = gated_attention_backward(st["tapes"][g], d_out)
            d_queries[qi] += grads.d_q
            for p in range(n_pages):
                d_keys[offsets[p] : offsets[p + 1]] += grads.d_keys[p]
                d_values[offsets[p] : offsets[p + 1]] += grads.d_values[p]
            d_gates_total += grads.d_gates

        gates = st["gates"]
        if cfg.mode == "hard" or n_pages <= cfg.k:
            d_scores = np.zeros(n_pages, dtype=np.float64)
        else:
            d_scores = d_gates_total * gates * (1.0 - gates) / st["tau_eff"]

        d_means = np.zeros((n_pages, cache.layout.head_dim), dtype=np.float64)
        d_stds = np.zeros(n_pages, dtype=np.float64)
        if np.any(d_scores != 0.0):
            for p in range(n_pages):
                ds = d_scores[p]
                if ds == 0.0:
                    continue
                winner = int(st["argmax_head"][p])
                d_queries[head * group_size + winner] += ds * st["means"][p]
                d_means[p] = ds * queries64[head * group_size + winner]
                d_stds[p] = ds * lam * st["norms"][winner]
                # Continue the chain into the raw keys of page p.
                cnt = int(counts[p])
                rows = slice(offsets[p], offsets[p + 1])
                d_keys[rows] += d_means[p] / cnt
                if st["stds"][p] > 0.0 and d_stds[p] != 0.0:
                    centered = page_keys[p] - st["means"][p]
                    d_keys[rows] += d_stds[p] * centered / (cnt * st["stds"][p])

        d_keys_out.append(d_keys)
        d_values_out.append(d_values)
        d_scores_out.append(d_scores)
        d_means_out.append(d_means)
        d_stds_out.append(d_stds)
        gates_out.append(gates)

    frozen = FrozenConstants(
        thetas=[st["theta"] for st in per_head],
        tau_effs=[st["tau_eff"] for st in per_head],
        norms=[st["norms"] for st in per_head],
    )
    return TrainStepResult(
        outputs=outputs,
        loss=loss,
        d_queries=d_queries,
        d_keys=d_keys_out,
        d_values=d_values_out,
        d_scores=d_scores_out,
        d_means=d_means_out,
        d_stds=d_stds_out,
        gates=gates_out,
        frozen=frozen,
    )

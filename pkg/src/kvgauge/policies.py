"""Compression policies: one head's attention inputs in, a keep-set out.

GVote is the adaptive, budget-free policy: it estimates a per-step token
budget from the current query's nucleus set, samples plausible future
queries from a Gaussian fit of the hidden states, lets each sample pick
its own top-k candidates on the attention logits, and keeps the union.
StreamingLLM, SnapKV and AdaKV are the fixed-budget baselines;
``compress_request`` applies any of them across a whole trace.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .select import CandidateSet, top_k_rows, top_p_select, union_sets
from .tensor_ops import (
    F32,
    RopeParams,
    avg_future_cos_sin,
    derive_seed,
    gaussian_sample,
    matmul,
    rope_apply,
    rope_apply_positions,
    row_mean_var,
    softmax_rows,
)
from .traceio import TraceBundle

POLICY_NAMES = ("gvote", "streamllm", "snapkv", "adakv", "keepall")
FIXED_BUDGET_POLICIES = ("streamllm", "snapkv", "adakv")


@dataclass(frozen=True)
class GVoteConfig:
    """Knobs for the adaptive policy.

    ``p_nuc`` is the nucleus threshold on the current query's attention,
    ``samples`` the number of synthetic future queries, ``n_f`` how many
    future positions the rotary angles are averaged over, and ``n_s`` how
    many leading (attention-sink) rows are excluded from the Gaussian fit.
    """

    p_nuc: float = 0.95
    samples: int = 8
    n_f: int = 64
    n_s: int = 4
    seed: int = 0
    include_current: bool = True

    def __post_init__(self) -> None:
        if not (0.0 < self.p_nuc <= 1.0):
            raise ValueError(f"p_nuc must be in (0, 1], got {self.p_nuc}")
        if self.samples < 1:
            raise ValueError(f"samples must be >= 1, got {self.samples}")
        if self.n_f < 1:
            raise ValueError(f"n_f must be >= 1, got {self.n_f}")
        if self.n_s < 0:
            raise ValueError(f"n_s must be >= 0, got {self.n_s}")


@dataclass
class HeadInputs:
    """One kv-head's attention inputs.

    ``w_q`` and ``q_current`` may carry a leading group axis when several
    query heads share this kv-head; single-head inputs are promoted to a
    group of one.
    """

    keys: np.ndarray  # (L, d_k), post-RoPE
    values: np.ndarray  # (L, d_k)
    hidden: np.ndarray  # (L, d_h)
    w_q: np.ndarray  # (d_h, d_k) or (g, d_h, d_k)
    q_current: np.ndarray  # (1, d_k) or (g, d_k), post-RoPE
    rope: RopeParams

    def __post_init__(self) -> None:
        self.keys = np.asarray(self.keys, dtype=F32)
        self.values = np.asarray(self.values, dtype=F32)
        self.hidden = np.asarray(self.hidden, dtype=F32)
        self.w_q = np.asarray(self.w_q, dtype=F32)
        self.q_current = np.asarray(self.q_current, dtype=F32)
        if self.w_q.ndim == 2:
            self.w_q = self.w_q[None]
        if self.q_current.ndim == 1:
            self.q_current = self.q_current[None]
        L, d_k = self.keys.shape
        if self.values.shape != (L, d_k):
            raise ValueError(f"values shape {self.values.shape} != keys shape {(L, d_k)}")
        if self.hidden.shape[0] != L:
            raise ValueError(f"hidden has {self.hidden.shape[0]} rows, keys have {L}")
        g, d_h = self.w_q.shape[0], self.hidden.shape[1]
        if self.w_q.shape[1:] != (d_h, d_k):
            raise ValueError(f"w_q slices must be ({d_h}, {d_k}), got {self.w_q.shape[1:]}")
        if self.q_current.shape != (g, d_k):
            raise ValueError(f"q_current shape {self.q_current.shape} != ({g}, {d_k})")

    @property
    def seq_len(self) -> int:
        return self.keys.shape[0]

    @property
    def group_size(self) -> int:
        return self.w_q.shape[0]


@dataclass
class GVoteResult:
    keep: CandidateSet
    current_set: CandidateSet | None
    b_step: int
    fallback: bool


def _attention_probs(q: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Rows of softmax(q K^T / sqrt(d_k))."""
    scale = F32(1.0 / np.sqrt(keys.shape[1]))
    return softmax_rows(matmul(q, keys.T) * scale)


def gvote_compress(inputs: HeadInputs, cfg: GVoteConfig) -> GVoteResult:
    """Adaptive Monte-Carlo keep-set for one kv-head.

    1. Nucleus-truncate the current query's attention at ``p_nuc``; the
       resulting set size becomes the per-sample budget.
    2. Fit a diagonal Gaussian to the hidden rows (sinks excluded) and
       draw ``samples`` synthetic hidden states.
    3. Project them through each group member's query slice and rotate by
       the averaged future-position angles.
    4. Row-wise top-k on the synthetic attention logits, then union the
       candidate sets (plus the current query's set by default).

    Grouped-query inputs average the group's attention rows for step 1 and
    contribute ``samples * group_size`` synthetic candidate sets.

    If fewer than two rows remain for the Gaussian fit the head falls back
    to keeping everything, flagged in the result.
    """
    L = inputs.seq_len
    if L < 1:
        raise ValueError("cannot compress an empty sequence")
    if L - cfg.n_s < 2:
        return GVoteResult(CandidateSet.full(L), None, L, fallback=True)

    probs = _attention_probs(inputs.q_current, inputs.keys)
    a0 = probs.mean(axis=0) if probs.shape[0] > 1 else probs[0]
    current = top_p_select(a0, cfg.p_nuc)
    b_step = len(current)

    mu, var = row_mean_var(inputs.hidden, cfg.n_s)
    h_samples = gaussian_sample(mu, var, cfg.samples, cfg.seed)
    cos, sin = avg_future_cos_sin(inputs.rope, cfg.n_f)
    q_synth = np.concatenate(
        [rope_apply(matmul(h_samples, inputs.w_q[j]), cos, sin) for j in range(inputs.group_size)],
        axis=0,
    )
    logits = matmul(q_synth, inputs.keys.T) * F32(1.0 / np.sqrt(inputs.keys.shape[1]))
    candidate_sets = top_k_rows(logits, b_step)
    if cfg.include_current:
        candidate_sets.append(current)
    _, keep = union_sets(candidate_sets)

    upper = min(q_synth.shape[0] * b_step + (b_step if cfg.include_current else 0), L)
    assert b_step <= len(keep) <= upper, (b_step, len(keep), upper)
    return GVoteResult(keep, current, b_step, fallback=False)


def policy_streamllm(seq_len: int, n_sink: int, window: int) -> CandidateSet:
    """Sink tokens plus a recency window."""
    if n_sink < 0 or window < 0:
        raise ValueError(f"n_sink/window must be >= 0, got {n_sink}/{window}")
    if n_sink + window < 1:
        raise ValueError("n_sink + window must be >= 1")
    mask = np.zeros(seq_len, dtype=bool)
    mask[: min(n_sink, seq_len)] = True
    mask[max(0, seq_len - window) :] = True
    return CandidateSet.from_mask(mask)


def policy_snapkv(attn_window: np.ndarray, budget: int, obs_window: int) -> CandidateSet:
    """Keep the observation window plus the prefix tokens it attends to most.

    ``attn_window`` holds one attention row over the full sequence per tail
    query; prefix tokens are scored by their mean attention across those rows.
    """
    attn_window = np.asarray(attn_window, dtype=np.float64)
    if attn_window.ndim != 2:
        raise ValueError(f"attn_window must be (W, L), got shape {attn_window.shape}")
    w, seq_len = attn_window.shape
    if w != obs_window or w < 1:
        raise ValueError(f"attn_window has {w} rows, expected obs_window={obs_window} >= 1")
    if w > seq_len:
        raise ValueError(f"obs_window {w} exceeds sequence length {seq_len}")
    if budget < obs_window:
        raise ValueError(f"budget {budget} smaller than observation window {obs_window}")
    n_prefix = seq_len - w
    scores = attn_window.mean(axis=0)[:n_prefix]
    k = min(budget - w, n_prefix)
    chosen = np.argsort(-scores, kind="stable")[:k]
    mask = np.zeros(seq_len, dtype=bool)
    mask[chosen] = True
    mask[n_prefix:] = True
    return CandidateSet.from_mask(mask)


def policy_adakv(scores: np.ndarray, total_budget: int) -> list[CandidateSet]:
    """Globally allocate a budget across heads: keep the top-B score cells."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError(f"scores must be (H, L), got shape {scores.shape}")
    if not np.all(np.isfinite(scores)) or np.any(scores < 0):
        raise ValueError("scores must be finite and nonnegative")
    n_heads, seq_len = scores.shape
    if not (0 <= total_budget <= n_heads * seq_len):
        raise ValueError(f"budget {total_budget} outside [0, {n_heads * seq_len}]")
    flat_order = np.argsort(-scores.reshape(-1), kind="stable")[:total_budget]
    out = []
    for h in range(n_heads):
        idx = np.sort(flat_order[flat_order // seq_len == h] % seq_len)
        out.append(CandidateSet(idx, seq_len))
    return out


@dataclass
class RequestKeepSets:
    """Per-layer, per-kv-head keep-sets for one request."""

    policy: str
    keepsets: list[list[CandidateSet]]
    seq_len: int
    fallbacks: int = 0
    b_steps: list[list[int]] | None = None

    @property
    def total_kept(self) -> int:
        return sum(len(s) for layer in self.keepsets for s in layer)

    @property
    def usage_ratio(self) -> float:
        cells = len(self.keepsets) * len(self.keepsets[0]) * self.seq_len
        return self.total_kept / cells


def _prompt_queries(trace: TraceBundle, layer: int, qh: int, positions: np.ndarray) -> np.ndarray:
    """Post-RoPE queries of the given prompt positions for one query head."""
    h = trace.hidden[layer][positions]
    q_pre = matmul(h, trace.w_q[layer][qh])
    return rope_apply_positions(q_pre, positions, trace.meta.theta_base)


def _window_attention(trace: TraceBundle, layer: int, kv_head: int, obs: int) -> np.ndarray:
    """Group-averaged causal attention rows of the last ``obs`` prompt tokens."""
    meta = trace.meta
    L = meta.seq_len
    positions = np.arange(L - obs, L)
    keys = trace.keys[layer][kv_head]
    rows = np.zeros((obs, L), dtype=np.float64)
    for j in range(meta.group_size):
        qh = kv_head * meta.group_size + j
        q = _prompt_queries(trace, layer, qh, positions)
        for r, pos in enumerate(positions):
            visible = keys[: pos + 1]
            rows[r, : pos + 1] += _attention_probs(q[r : r + 1], visible)[0]
    return (rows / meta.group_size).astype(F32)


def _snapkv_budget(ratio: float, seq_len: int) -> int:
    return max(1, round(ratio * seq_len))


def compress_request(
    trace: TraceBundle,
    policy: str,
    *,
    gvote: GVoteConfig | None = None,
    ratio: float | None = None,
    n_sink: int = 4,
    obs_window: int = 16,
) -> RequestKeepSets:
    """Apply one policy to every (layer, kv-head) of a trace.

    Fixed-budget policies take ``ratio``: per-head budget
    ``round(ratio * seq_len)`` for snapkv/streamllm, per-layer budget
    ``round(ratio * n_kv_heads * seq_len)`` for adakv.
    """
    if policy not in POLICY_NAMES:
        raise ValueError(f"unknown policy {policy!r}, expected one of {POLICY_NAMES}")
    if policy in FIXED_BUDGET_POLICIES:
        if ratio is None or not (0.0 < ratio <= 1.0):
            raise ValueError(f"policy {policy!r} needs a ratio in (0, 1], got {ratio}")
    meta = trace.meta
    L, g = meta.seq_len, meta.group_size
    keepsets: list[list[CandidateSet]] = []
    b_steps: list[list[int]] = []
    fallbacks = 0

    for layer in range(meta.n_layers):
        layer_sets: list[CandidateSet] = []
        layer_bsteps: list[int] = []
        if policy == "adakv":
            try:
                budget = min(round(ratio * meta.n_kv_heads * L), meta.n_kv_heads * L)
                obs = max(1, min(obs_window, L, budget))
                scores = np.stack(
                    [_window_attention(trace, layer, h, obs).mean(axis=0) for h in range(meta.n_kv_heads)]
                )
                layer_sets = policy_adakv(scores, budget)
            except ValueError as exc:
                raise ValueError(f"layer {layer}: {exc}") from exc
        else:
            for h in range(meta.n_kv_heads):
                try:
                    if policy == "keepall":
                        layer_sets.append(CandidateSet.full(L))
                    elif policy == "streamllm":
                        budget = _snapkv_budget(ratio, L)
                        sink = min(n_sink, budget)
                        layer_sets.append(policy_streamllm(L, sink, budget - sink))
                    elif policy == "snapkv":
                        budget = _snapkv_budget(ratio, L)
                        obs = max(1, min(obs_window, L, budget))
                        attn = _window_attention(trace, layer, h, obs)
                        layer_sets.append(policy_snapkv(attn, budget, obs))
                    else:  # gvote
                        cfg = gvote or GVoteConfig()
                        qheads = range(h * g, (h + 1) * g)
                        last = np.array([L - 1])
                        q_cur = np.concatenate(
                            [_prompt_queries(trace, layer, qh, last) for qh in qheads], axis=0
                        )
                        inputs = HeadInputs(
                            keys=trace.keys[layer][h],
                            values=trace.values[layer][h],
                            hidden=trace.hidden[layer],
                            w_q=trace.w_q[layer][h * g : (h + 1) * g],
                            q_current=q_cur,
                            rope=RopeParams(meta.theta_base, meta.d_k, position_offset=L),
                        )
                        result = gvote_compress(inputs, replace(cfg, seed=derive_seed(cfg.seed, layer, h)))
                        fallbacks += result.fallback
                        layer_bsteps.append(result.b_step)
                        layer_sets.append(result.keep)
                except ValueError as exc:
                    raise ValueError(f"layer {layer}, head {h}: {exc}") from exc
        keepsets.append(layer_sets)
        b_steps.append(layer_bsteps)

    return RequestKeepSets(
        policy=policy,
        keepsets=keepsets,
        seq_len=L,
        fallbacks=fallbacks,
        b_steps=b_steps if policy == "gvote" else None,
    )

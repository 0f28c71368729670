"""Experiment driver: run policies over traces, sweep budgets, emit CSV.

Accuracy at desk scale is operationalized as attention overlap (ground
truth attention mass retained) and output cosine similarity, since
benchmark accuracies require full model inference. One
:class:`MetricsRecord` is one point on an accuracy-vs-usage curve.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cache import NonUniformCache, prune, varlen_attention
from .metrics import attention_overlap, output_cosine, pearson
from .policies import (
    FIXED_BUDGET_POLICIES,
    GVoteConfig,
    RequestKeepSets,
    compress_request,
)
from .select import top_p_select
from .tensor_ops import (
    F32,
    RopeParams,
    avg_future_cos_sin,
    derive_seed,
    gaussian_sample,
    matmul,
    rope_apply,
    row_mean_var,
    softmax_rows,
)
from .traceio import TraceBundle

CSV_HEADER = [
    "policy",
    "config",
    "usage_ratio",
    "attention_overlap",
    "pearson_r",
    "output_cosine",
    "per_layer_usage",
    "per_layer_overlap",
    "per_layer_pearson",
    "per_layer_cosine",
]

OVERLAP_CSV_HEADER = ["layer", "query_head", "gt_step", "overlap", "usage", "pearson_r"]


@dataclass
class MetricsRecord:
    """Averaged accuracy proxies for one (trace, policy, config) cell."""

    policy: str
    config: str
    usage_ratio: float
    attention_overlap: float
    pearson_r: float
    output_cosine: float
    per_layer_usage: list[float] = field(default_factory=list)
    per_layer_overlap: list[float] = field(default_factory=list)
    per_layer_pearson: list[float] = field(default_factory=list)
    per_layer_cosine: list[float] = field(default_factory=list)

    def csv_row(self) -> list[str]:
        return [
            self.policy,
            self.config,
            f"{self.usage_ratio:.6f}",
            f"{self.attention_overlap:.6f}",
            f"{self.pearson_r:.6f}",
            f"{self.output_cosine:.6f}",
            _join(self.per_layer_usage),
            _join(self.per_layer_overlap),
            _join(self.per_layer_pearson),
            _join(self.per_layer_cosine),
        ]


def _join(values: list[float]) -> str:
    return ";".join(f"{v:.6f}" for v in values)


def write_csv(records: list[MetricsRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow(rec.csv_row())


def _config_echo(policy: str, gvote: GVoteConfig | None, ratio: float | None,
                 n_sink: int, obs_window: int) -> str:
    if policy == "gvote":
        cfg = gvote or GVoteConfig()
        return (
            f"p_nuc={cfg.p_nuc} samples={cfg.samples} n_f={cfg.n_f} "
            f"n_s={cfg.n_s} seed={cfg.seed} include_current={cfg.include_current}"
        )
    if policy == "keepall":
        return ""
    parts = [f"ratio={ratio}"]
    if policy == "streamllm":
        parts.append(f"n_sink={n_sink}")
    if policy in ("snapkv", "adakv"):
        parts.append(f"obs_window={obs_window}")
    return " ".join(parts)


def evaluate_keepsets(trace: TraceBundle, request: RequestKeepSets) -> MetricsRecord:
    """Score keep-sets against every ground-truth future query of the trace."""
    meta = trace.meta
    g = meta.group_size
    per_layer_usage, per_layer_overlap, per_layer_pearson, per_layer_cosine = [], [], [], []

    for layer in range(meta.n_layers):
        sets = request.keepsets[layer]
        cache = prune(trace.keys[layer], trace.values[layer], sets)
        per_layer_usage.append(cache.usage_ratio())
        overlaps, pearsons, cosines = [], [], []
        empty_heads = {h for h in range(meta.n_kv_heads) if len(sets[h]) == 0}

        for t in range(meta.n_gt):
            for j in range(g):
                queries = np.stack(
                    [trace.gt_queries[layer][t, h * g + j] for h in range(meta.n_kv_heads)]
                ).astype(F32)
                outs, weights = _attend_allowing_empty(cache, queries, empty_heads)
                for h in range(meta.n_kv_heads):
                    qh = h * g + j
                    gt_row = trace.gt_attn[layer][t, qh]
                    full_out = gt_row.astype(np.float64) @ trace.values[layer][h].astype(np.float64)
                    overlaps.append(attention_overlap(sets[h], gt_row))
                    pruned_row = np.zeros(meta.seq_len, dtype=np.float64)
                    if h not in empty_heads:
                        pruned_row[sets[h].indices] = weights[h]
                    pearsons.append(pearson(gt_row, pruned_row))
                    cosines.append(output_cosine(full_out, outs[h]))
        per_layer_overlap.append(float(np.mean(overlaps)))
        per_layer_pearson.append(float(np.mean(pearsons)))
        per_layer_cosine.append(float(np.mean(cosines)))

    return MetricsRecord(
        policy=request.policy,
        config="",
        usage_ratio=request.usage_ratio,
        attention_overlap=float(np.mean(per_layer_overlap)),
        pearson_r=float(np.mean(per_layer_pearson)),
        output_cosine=float(np.mean(per_layer_cosine)),
        per_layer_usage=per_layer_usage,
        per_layer_overlap=per_layer_overlap,
        per_layer_pearson=per_layer_pearson,
        per_layer_cosine=per_layer_cosine,
    )


def _attend_allowing_empty(cache, queries, empty_heads):
    """Varlen attention, with zero outputs substituted for starved heads."""
    if not empty_heads:
        return varlen_attention(cache, queries, return_weights=True)
    d_k = queries.shape[1]
    outs = np.zeros((cache.num_heads, d_k), dtype=F32)
    weights: list[np.ndarray] = [np.zeros(0)] * cache.num_heads
    for h in range(cache.num_heads):
        if h in empty_heads:
            continue
        sub = cache_single_head(cache, h)
        o, w = varlen_attention(sub, queries[h : h + 1], return_weights=True)
        outs[h] = o[0]
        weights[h] = w[0]
    return outs, weights


def cache_single_head(cache: NonUniformCache, head: int) -> NonUniformCache:
    k, v = cache.head_slice(head)
    n = k.shape[0]
    return NonUniformCache(
        np.array([0, n], dtype=np.int64), k, v, [cache.kept_indices[head]], cache.seq_len
    )


def run_policy(
    trace: TraceBundle,
    policy: str,
    *,
    gvote: GVoteConfig | None = None,
    ratio: float | None = None,
    n_sink: int = 4,
    obs_window: int = 16,
) -> MetricsRecord:
    """Compress a trace with one policy and score the result."""
    request = compress_request(
        trace, policy, gvote=gvote, ratio=ratio, n_sink=n_sink, obs_window=obs_window
    )
    record = evaluate_keepsets(trace, request)
    record.config = _config_echo(policy, gvote, ratio, n_sink, obs_window)
    return record


def sweep(
    trace: TraceBundle,
    policy: str,
    ratios: list[float],
    *,
    n_sink: int = 4,
    obs_window: int = 16,
) -> list[MetricsRecord]:
    """One record per compression ratio, for the fixed-budget policies."""
    if policy not in FIXED_BUDGET_POLICIES:
        raise ValueError(
            f"sweep needs a fixed-budget policy {FIXED_BUDGET_POLICIES}; "
            f"{policy!r} sets its own budget (use run_policy)"
        )
    if not ratios:
        raise ValueError("ratios must be non-empty")
    for r in ratios:
        if not (0.0 < r <= 1.0):
            raise ValueError(f"ratios must lie in (0, 1], got {r}")
    return [
        run_policy(trace, policy, ratio=r, n_sink=n_sink, obs_window=obs_window) for r in ratios
    ]


@dataclass
class OverlapRecord:
    """Synthetic-query quality for one (layer, query head, future step)."""

    layer: int
    query_head: int
    gt_step: int
    overlap: float
    usage: float
    pearson_r: float

    def csv_row(self) -> list[str]:
        return [
            str(self.layer),
            str(self.query_head),
            str(self.gt_step),
            f"{self.overlap:.6f}",
            f"{self.usage:.6f}",
            f"{self.pearson_r:.6f}",
        ]


def overlap_analysis(
    trace: TraceBundle,
    samples: int,
    *,
    p_nuc: float = 0.95,
    n_f: int = 64,
    n_s: int = 4,
    seed: int = 0,
) -> list[OverlapRecord]:
    """Per-head agreement between synthetic and ground-truth future queries.

    For each query head, synthetic queries are sampled the same way the
    adaptive policy samples them; their mean attention row is nucleus
    truncated at ``p_nuc`` and scored against each ground-truth row: the
    overlap is the ground-truth mass inside the candidate set, usage is
    the candidate fraction of the sequence, and the correlation compares
    the two attention rows directly.
    """
    meta = trace.meta
    L = meta.seq_len
    records: list[OverlapRecord] = []
    scale = F32(1.0 / np.sqrt(meta.d_k))
    for layer in range(meta.n_layers):
        n_skip = n_s if L - n_s >= 2 else 0
        mu, var = row_mean_var(trace.hidden[layer], n_skip)
        cos, sin = avg_future_cos_sin(RopeParams(meta.theta_base, meta.d_k, position_offset=L), n_f)
        for qh in range(meta.n_query_heads):
            kv = qh // meta.group_size
            h_samples = gaussian_sample(mu, var, samples, derive_seed(seed, layer, qh))
            q_synth = rope_apply(matmul(h_samples, trace.w_q[layer][qh]), cos, sin)
            rows = softmax_rows(matmul(q_synth, trace.keys[layer][kv].T) * scale)
            synth_row = rows.astype(np.float64).mean(axis=0)
            candidates = top_p_select(synth_row / synth_row.sum(), p_nuc)
            usage = len(candidates) / L
            for t in range(meta.n_gt):
                gt_row = trace.gt_attn[layer][t, qh]
                records.append(
                    OverlapRecord(
                        layer=layer,
                        query_head=qh,
                        gt_step=t,
                        overlap=attention_overlap(candidates, gt_row),
                        usage=usage,
                        pearson_r=pearson(synth_row, gt_row),
                    )
                )
    return records


def write_overlap_csv(records: list[OverlapRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(OVERLAP_CSV_HEADER)
        for rec in records:
            writer.writerow(rec.csv_row())

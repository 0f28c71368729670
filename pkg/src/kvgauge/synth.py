"""Synthetic trace generator with known ground truth.

Hidden-state rows are drawn from a per-channel diagonal Gaussian, so the
distribution the compression policies try to fit holds by construction.
Keys and values are fixed random projections of the hidden states; a
configurable number of "salient" token clusters (plus an attention-sink
token) receive an extra component along a reserved slow-rotating channel
pair, which every query is aligned with, so ground-truth attention
concentrates on those tokens. Future queries are drawn from the same
hidden distribution, projected and rotated at their true positions, and
their exact attention rows are recorded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_ops import (
    F32,
    derive_seed,
    rng_from_seed,
    rope_apply_positions,
    softmax_rows,
)
from .traceio import TraceBundle, TraceMeta

# substream tags for per-layer derived seeds
_TAG_CHANNEL_PARAMS = 0
_TAG_HIDDEN = 1
_TAG_SALIENT_POSITIONS = 2
_TAG_KV_PROJ = 3
_TAG_Q_PROJ = 4
_TAG_FUTURE = 5

# alignment margin: expected logit gap between salient and noise tokens
_QUERY_ALIGN_LOGIT = 24.0
_CLUSTER_GAIN = 1.0


@dataclass
class SynthSpec:
    """Dimensions and knobs for one synthetic trace."""

    n_layers: int = 1
    n_kv_heads: int = 1
    group_size: int = 1
    d_k: int = 32
    d_h: int = 48
    seq_len: int = 256
    sink_strength: float = 1.0
    cluster_count: int = 1
    noise_scale: float = 1.0
    seed: int = 0
    n_gt: int = 2
    theta_base: float = 500000.0

    def validate(self) -> None:
        for name in ("n_layers", "n_kv_heads", "group_size", "d_k", "d_h", "cluster_count", "n_gt"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.seq_len < 4:
            raise ValueError(f"seq_len must be >= 4, got {self.seq_len}")
        if self.d_k % 2 != 0:
            raise ValueError(f"d_k must be even, got {self.d_k}")
        if self.sink_strength < 0 or self.noise_scale < 0:
            raise ValueError("sink_strength and noise_scale must be >= 0")
        if self.theta_base <= 0:
            raise ValueError(f"theta_base must be positive, got {self.theta_base}")

    @property
    def cluster_size(self) -> int:
        per_cluster = max(4, self.seq_len // 64)
        available = self.seq_len - 1  # position 0 is reserved for the sink
        return max(1, min(per_cluster, available // self.cluster_count))


def channel_params(spec: SynthSpec, layer: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel hidden-state mean and std for one layer (the generator's targets)."""
    rng = rng_from_seed(derive_seed(spec.seed, layer, _TAG_CHANNEL_PARAMS))
    mu = rng.normal(0.0, 1.0, spec.d_h)
    sigma = rng.uniform(0.5, 1.5, spec.d_h)
    return mu, sigma


def salient_positions(spec: SynthSpec, layer: int) -> np.ndarray:
    """Token positions carrying the salient clusters for one layer."""
    rng = rng_from_seed(derive_seed(spec.seed, layer, _TAG_SALIENT_POSITIONS))
    total = spec.cluster_size * spec.cluster_count
    return np.sort(rng.choice(np.arange(1, spec.seq_len), size=total, replace=False))


def generate_synth(spec: SynthSpec) -> TraceBundle:
    """Deterministically manufacture a trace bundle from the spec."""
    spec.validate()
    L, d_k, d_h = spec.seq_len, spec.d_k, spec.d_h
    n_q = spec.n_kv_heads * spec.group_size
    salient_channel = d_k - 2  # x-channel of the slowest rotary pair
    proj_scale = 1.0 / np.sqrt(d_h)
    inv_sqrt_dk = F32(1.0 / np.sqrt(d_k))

    hidden, keys, values, w_q, gt_queries, gt_attn = [], [], [], [], [], []
    for layer in range(spec.n_layers):
        mu, sigma = channel_params(spec, layer)
        h_rng = rng_from_seed(derive_seed(spec.seed, layer, _TAG_HIDDEN))
        h = (mu + sigma * h_rng.standard_normal((L, d_h))).astype(F32)
        hidden.append(h)

        pos_salient = salient_positions(spec, layer)
        layer_keys = np.empty((spec.n_kv_heads, L, d_k), dtype=F32)
        layer_values = np.empty((spec.n_kv_heads, L, d_k), dtype=F32)
        for kv in range(spec.n_kv_heads):
            p_rng = rng_from_seed(derive_seed(spec.seed, layer, _TAG_KV_PROJ, kv))
            w_k = p_rng.normal(0.0, proj_scale, (d_h, d_k))
            w_k[:, -2:] = 0.0  # reserve the salience pair for cluster/sink structure
            w_v = p_rng.normal(0.0, proj_scale, (d_h, d_k))
            k_pre = spec.noise_scale * (h.astype(np.float64) @ w_k)
            k_pre[pos_salient, salient_channel] += _CLUSTER_GAIN
            if spec.sink_strength > 0:
                # pure-salience sink key; mass ~ sink_strength x one cluster token's
                sink_gain = _CLUSTER_GAIN * (1.0 + np.log(spec.sink_strength) / _QUERY_ALIGN_LOGIT)
                k_pre[0] = 0.0
                k_pre[0, salient_channel] = sink_gain
            layer_keys[kv] = rope_apply_positions(k_pre, np.arange(L), spec.theta_base)
            layer_values[kv] = (h.astype(np.float64) @ w_v).astype(F32)
        keys.append(layer_keys)
        values.append(layer_values)

        layer_wq = np.empty((n_q, d_h, d_k), dtype=F32)
        q_align = _QUERY_ALIGN_LOGIT * np.sqrt(d_k) / _CLUSTER_GAIN
        steer = mu / sigma**2  # minimum-variance direction reaching the target mean
        for qh in range(n_q):
            q_rng = rng_from_seed(derive_seed(spec.seed, layer, _TAG_Q_PROJ, qh))
            w = q_rng.normal(0.0, proj_scale, (d_h, d_k))
            # steer the mean query onto the salience channel with a fixed logit margin
            current = mu @ w[:, salient_channel]
            w[:, salient_channel] += steer * ((q_align - current) / (mu @ steer))
            layer_wq[qh] = w.astype(F32)
        w_q.append(layer_wq)

        f_rng = rng_from_seed(derive_seed(spec.seed, layer, _TAG_FUTURE))
        h_future = mu + sigma * f_rng.standard_normal((spec.n_gt, d_h))
        layer_gt_q = np.empty((spec.n_gt, n_q, d_k), dtype=F32)
        layer_gt_a = np.empty((spec.n_gt, n_q, L), dtype=F32)
        for t in range(spec.n_gt):
            q_pre = h_future[t] @ layer_wq.astype(np.float64)  # (n_q, d_k)
            q_rot = rope_apply_positions(q_pre, np.full(n_q, L + t), spec.theta_base)
            layer_gt_q[t] = q_rot
            for qh in range(n_q):
                kv = qh // spec.group_size
                logits = (q_rot[qh : qh + 1].astype(np.float64) @ layer_keys[kv].astype(np.float64).T).astype(F32)
                layer_gt_a[t, qh] = softmax_rows(logits * inv_sqrt_dk)[0]
        gt_queries.append(layer_gt_q)
        gt_attn.append(layer_gt_a)

    meta = TraceMeta(
        model="synthetic",
        n_layers=spec.n_layers,
        n_kv_heads=spec.n_kv_heads,
        group_size=spec.group_size,
        d_k=d_k,
        d_h=d_h,
        seq_len=L,
        theta_base=spec.theta_base,
        rope_convention="interleaved",
        n_gt=spec.n_gt,
    )
    bundle = TraceBundle(meta, hidden, keys, values, w_q, gt_queries, gt_attn)
    bundle.validate()
    return bundle

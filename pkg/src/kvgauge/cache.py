"""Non-uniform per-head pruned KV cache (varlen layout) and attention over it.

Heads may retain different numbers of rows; kept rows are concatenated in
head order with a prefix-sum offset table, and attention renormalizes over
the kept set only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .select import CandidateSet
from .tensor_ops import F32, matmul, softmax_rows


@dataclass
class NonUniformCache:
    """Concatenated kept K/V rows for all heads of one layer."""

    head_offsets: np.ndarray  # (H + 1,) prefix sums of kept counts
    keys_flat: np.ndarray  # (total_kept, d_k)
    values_flat: np.ndarray  # (total_kept, d_k)
    kept_indices: list[np.ndarray]  # per head, sorted original positions
    seq_len: int

    def __post_init__(self) -> None:
        self.head_offsets = np.asarray(self.head_offsets, dtype=np.int64)
        if np.any(np.diff(self.head_offsets) < 0) or self.head_offsets[0] != 0:
            raise ValueError("head_offsets must be nondecreasing and start at 0")
        total = int(self.head_offsets[-1])
        if self.keys_flat.shape[0] != total or self.values_flat.shape[0] != total:
            raise ValueError(
                f"flat row count {self.keys_flat.shape[0]}/{self.values_flat.shape[0]} "
                f"does not match final offset {total}"
            )
        if len(self.kept_indices) != self.num_heads:
            raise ValueError("kept_indices must have one entry per head")
        for h, idx in enumerate(self.kept_indices):
            if idx.size != self.kept_count(h):
                raise ValueError(f"head {h}: kept_indices length disagrees with offsets")
            if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= self.seq_len):
                raise ValueError(f"head {h}: kept_indices must be sorted, unique, in range")

    @property
    def num_heads(self) -> int:
        return int(self.head_offsets.shape[0] - 1)

    def kept_count(self, head: int) -> int:
        return int(self.head_offsets[head + 1] - self.head_offsets[head])

    def head_slice(self, head: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = int(self.head_offsets[head]), int(self.head_offsets[head + 1])
        return self.keys_flat[lo:hi], self.values_flat[lo:hi]

    def usage_ratio(self) -> float:
        return int(self.head_offsets[-1]) / (self.num_heads * self.seq_len)


def prune(keys: np.ndarray, values: np.ndarray, keepsets: list[CandidateSet]) -> NonUniformCache:
    """Gather kept rows per head, ascending original order."""
    keys = np.asarray(keys, dtype=F32)
    values = np.asarray(values, dtype=F32)
    if keys.ndim != 3 or keys.shape != values.shape:
        raise ValueError(f"keys/values must be (H, L, d) with equal shape, got {keys.shape}/{values.shape}")
    n_heads, seq_len, _ = keys.shape
    if len(keepsets) != n_heads:
        raise ValueError(f"expected {n_heads} keep-sets, got {len(keepsets)}")
    gathered_k, gathered_v, kept = [], [], []
    offsets = np.zeros(n_heads + 1, dtype=np.int64)
    for h, ks in enumerate(keepsets):
        if ks.universe != seq_len:
            raise ValueError(f"head {h}: keep-set universe {ks.universe} != sequence length {seq_len}")
        idx = ks.indices
        gathered_k.append(keys[h, idx])
        gathered_v.append(values[h, idx])
        kept.append(idx.copy())
        offsets[h + 1] = offsets[h] + idx.size
    keys_flat = np.concatenate(gathered_k, axis=0) if gathered_k else np.zeros((0, keys.shape[2]), F32)
    values_flat = np.concatenate(gathered_v, axis=0) if gathered_v else np.zeros((0, keys.shape[2]), F32)
    return NonUniformCache(offsets, keys_flat, values_flat, kept, seq_len)


def varlen_attention(
    cache: NonUniformCache,
    queries: np.ndarray,
    return_weights: bool = False,
) -> np.ndarray | tuple[np.ndarray, list[np.ndarray]]:
    """Per-head attention over the kept rows only (softmax renormalized).

    ``queries`` is (H, d_k), one query row per cache head. With
    ``return_weights`` the per-head renormalized attention vectors over the
    kept rows are returned as well.
    """
    queries = np.asarray(queries, dtype=F32)
    if queries.ndim != 2 or queries.shape[0] != cache.num_heads:
        raise ValueError(f"queries must be ({cache.num_heads}, d_k), got {queries.shape}")
    d_k = cache.keys_flat.shape[1] if cache.keys_flat.size else queries.shape[1]
    if queries.shape[1] != d_k:
        raise ValueError(f"query dim {queries.shape[1]} != cache dim {d_k}")
    scale = F32(1.0 / np.sqrt(d_k))
    outputs = np.empty((cache.num_heads, d_k), dtype=F32)
    weights: list[np.ndarray] = []
    for h in range(cache.num_heads):
        k, v = cache.head_slice(h)
        if k.shape[0] == 0:
            raise ValueError(f"head {h}: cannot attend over an empty cache")
        logits = matmul(queries[h : h + 1], k.T) * scale
        w = softmax_rows(logits)
        outputs[h] = matmul(w, v)[0]
        if return_weights:
            weights.append(w[0])
    if return_weights:
        return outputs, weights
    return outputs

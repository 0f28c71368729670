"""Accuracy proxies comparing a pruned cache against ground truth."""

from __future__ import annotations

import warnings

import numpy as np

from .select import CandidateSet

ATTN_SUM_TOL = 1e-4


def attention_overlap(selected: CandidateSet, gt_attn: np.ndarray) -> float:
    """Ground-truth attention mass captured by the selected indices."""
    gt = np.asarray(gt_attn, dtype=np.float64).reshape(-1)
    if gt.shape[0] != selected.universe:
        raise ValueError(f"universe mismatch: set over {selected.universe}, attention over {gt.shape[0]}")
    total = gt.sum()
    if abs(total - 1.0) > ATTN_SUM_TOL:
        raise ValueError(f"gt_attn must sum to 1 within {ATTN_SUM_TOL}, got {total!r}")
    return float(np.clip(gt[selected.indices].sum(), 0.0, 1.0))


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Sample Pearson correlation, clipped into [-1, 1] against float drift."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape or a.shape[0] < 2:
        raise ValueError(f"need two equal-length vectors of >= 2 entries, got {a.shape}/{b.shape}")
    da, db = a - a.mean(), b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0.0:
        raise ValueError("zero variance input, correlation undefined")
    return float(np.clip((da * db).sum() / denom, -1.0, 1.0))


def output_cosine(full_out: np.ndarray, pruned_out: np.ndarray) -> float:
    """Cosine similarity between full and pruned attention outputs.

    A zero-norm pruned output (e.g. a fully starved head) is reported as
    0.0 with a warning rather than an error.
    """
    full = np.asarray(full_out, dtype=np.float64).reshape(-1)
    pruned = np.asarray(pruned_out, dtype=np.float64).reshape(-1)
    if full.shape != pruned.shape:
        raise ValueError(f"shape mismatch: {full.shape} vs {pruned.shape}")
    n_full = np.linalg.norm(full)
    if n_full == 0.0:
        raise ValueError("full output has zero norm")
    n_pruned = np.linalg.norm(pruned)
    if n_pruned == 0.0:
        warnings.warn("pruned output has zero norm; reporting cosine 0.0", stacklevel=2)
        return 0.0
    return float(np.clip(full @ pruned / (n_full * n_pruned), -1.0, 1.0))

"""Index-selection primitives: nucleus (top-p) truncation, row-wise top-k,
and mask-based set union.

All tie-breaks are by lower index, so results are reproducible across runs
and implementations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_SUM_TOL = 1e-4


@dataclass
class CandidateSet:
    """Sorted unique token positions within a sequence of length ``universe``."""

    indices: np.ndarray
    universe: int

    def __post_init__(self) -> None:
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if self.universe < 0:
            raise ValueError(f"universe must be >= 0, got {self.universe}")
        if self.indices.size:
            if np.any(np.diff(self.indices) <= 0):
                raise ValueError("indices must be strictly increasing")
            if self.indices[0] < 0 or self.indices[-1] >= self.universe:
                raise ValueError(
                    f"indices out of range [0, {self.universe}): "
                    f"[{self.indices[0]}, {self.indices[-1]}]"
                )

    def __len__(self) -> int:
        return int(self.indices.size)

    def to_mask(self) -> np.ndarray:
        mask = np.zeros(self.universe, dtype=bool)
        mask[self.indices] = True
        return mask

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "CandidateSet":
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        return cls(np.flatnonzero(mask), mask.shape[0])

    @classmethod
    def full(cls, universe: int) -> "CandidateSet":
        return cls(np.arange(universe, dtype=np.int64), universe)


@dataclass
class KeepMask:
    """Boolean retention mask over one head's sequence."""

    bits: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=bool).reshape(-1)

    def popcount(self) -> int:
        return int(self.bits.sum())


def top_p_select(probs: np.ndarray, p_nuc: float) -> CandidateSet:
    """Minimal set of indices whose descending probabilities reach mass >= p_nuc.

    Ties are broken by lower index. With p_nuc == 1.0 every index with
    nonzero probability is returned, regardless of float shortfall in the
    cumulative sum.
    """
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    if probs.size == 0:
        raise ValueError("top_p_select requires a non-empty probability vector")
    if not (0.0 < p_nuc <= 1.0):
        raise ValueError(f"p_nuc must be in (0, 1], got {p_nuc}")
    if np.any(probs < 0):
        raise ValueError("probabilities must be nonnegative")
    total = probs.sum()
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ValueError(f"probabilities must sum to 1 within {PROB_SUM_TOL}, got {total!r}")

    order = np.argsort(-probs, kind="stable")  # descending, lower index first on ties
    csum = np.cumsum(probs[order])
    cut = int(np.searchsorted(csum, p_nuc))
    if cut >= probs.size:
        # float shortfall at p_nuc ~ 1: keep all nonzero-probability indices
        chosen = order[probs[order] > 0]
    else:
        chosen = order[: cut + 1]
    return CandidateSet(np.sort(chosen), probs.size)


def top_k_rows(logits: np.ndarray, k: int) -> list[CandidateSet]:
    """Per-row indices of the k largest logits (k clamped to the row length)."""
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise ValueError(f"top_k_rows expects a matrix, got shape {logits.shape}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n = logits.shape[1]
    k_eff = min(k, n)
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k_eff]
    return [CandidateSet(np.sort(row), n) for row in order]


def union_sets(sets: list[CandidateSet]) -> tuple[KeepMask, CandidateSet]:
    """OR the sets' masks; returns the mask and its sorted index list."""
    if not sets:
        raise ValueError("union_sets requires at least one set")
    universe = sets[0].universe
    mask = np.zeros(universe, dtype=bool)
    for s in sets:
        if s.universe != universe:
            raise ValueError(f"mixed universes in union: {s.universe} != {universe}")
        mask[s.indices] = True
    return KeepMask(mask), CandidateSet.from_mask(mask)

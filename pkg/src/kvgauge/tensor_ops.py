"""Dense numeric kernels shared by every policy and the harness.

All public functions take and return float32 numpy arrays ("desk-scale
tensors"): float32 storage, float64 accumulation inside reductions.
Everything is a pure function and deterministic, including the Gaussian
source, which is backed by the counter-based Philox generator so that
per-head streams can be derived from one root seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

F32 = np.float32


@dataclass(frozen=True)
class RopeParams:
    """Rotary-embedding parameters for one head dimension.

    ``position_offset`` is the absolute position just before the first
    future slot; averaged future angles cover positions
    ``position_offset + 1 .. position_offset + n_f``.
    """

    theta_base: float
    head_dim: int
    position_offset: int = 0

    def __post_init__(self) -> None:
        if self.theta_base <= 0:
            raise ValueError(f"theta_base must be positive, got {self.theta_base}")
        if self.head_dim <= 0 or self.head_dim % 2 != 0:
            raise ValueError(f"head_dim must be a positive even integer, got {self.head_dim}")


def as_f32(x) -> np.ndarray:
    """Coerce to a contiguous float32 array without copying when possible."""
    return np.ascontiguousarray(x, dtype=F32)


def rng_from_seed(seed: int) -> np.random.Generator:
    """Counter-based generator; same seed, bit-identical stream."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def derive_seed(seed: int, *path: int) -> int:
    """Substream seed for e.g. (layer, head), stable across runs and platforms."""
    return int(np.random.SeedSequence((np.uint64(seed), *path)).generate_state(1, np.uint64)[0])


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with float64 accumulation, float32 result."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(F32)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shift-invariant (max subtracted per row)."""
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise ValueError(f"softmax_rows expects a matrix, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise ValueError("softmax_rows requires finite logits")
    shifted = logits.astype(np.float64) - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=1, keepdims=True)).astype(F32)


def row_mean_var(x: np.ndarray, skip_first: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and population variance over rows ``skip_first..n-1``.

    The leading rows are excluded so that attention-sink tokens do not
    contaminate the distribution fit.
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"row_mean_var expects a matrix, got shape {x.shape}")
    if skip_first < 0:
        raise ValueError(f"skip_first must be >= 0, got {skip_first}")
    n = x.shape[0] - skip_first
    if n < 2:
        raise ValueError(f"row_mean_var needs at least 2 rows after skipping, got {n}")
    body = x[skip_first:].astype(np.float64)
    mu = body.mean(axis=0)
    var = np.square(body - mu).mean(axis=0)
    return mu.astype(F32), var.astype(F32)


def gaussian_sample(mu: np.ndarray, var: np.ndarray, count: int, seed: int) -> np.ndarray:
    """Draw ``count`` rows from N(mu, diag(var)), deterministic per seed.

    Rows are filled in order, so the first k rows of a larger draw equal
    the k-row draw for the same seed (prefix-stable streams).
    """
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if mu.shape != var.shape or mu.ndim != 1:
        raise ValueError(f"mu/var must be equal-length vectors, got {mu.shape} and {var.shape}")
    if np.any(var < 0):
        raise ValueError("gaussian_sample requires nonnegative variances")
    if count < 1:
        raise ValueError(f"sample count must be >= 1, got {count}")
    z = rng_from_seed(seed).standard_normal((count, mu.shape[0]))
    return (mu + np.sqrt(var) * z).astype(F32)


def rope_apply(q: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    """Rotate interleaved channel pairs (2i, 2i+1) by the given angles.

    out[2i]   = q[2i] * cos[i] - q[2i+1] * sin[i]
    out[2i+1] = q[2i] * sin[i] + q[2i+1] * cos[i]
    """
    q = np.asarray(q)
    if q.ndim != 2 or q.shape[1] % 2 != 0:
        raise ValueError(f"rope_apply expects rows of even length, got shape {q.shape}")
    half = q.shape[1] // 2
    cos = np.asarray(cos, dtype=np.float64).reshape(-1)
    sin = np.asarray(sin, dtype=np.float64).reshape(-1)
    if cos.shape[0] != half or sin.shape[0] != half:
        raise ValueError(f"cos/sin must have length {half}, got {cos.shape[0]}/{sin.shape[0]}")
    x = q[:, 0::2].astype(np.float64)
    y = q[:, 1::2].astype(np.float64)
    out = np.empty(q.shape, dtype=np.float64)
    out[:, 0::2] = x * cos - y * sin
    out[:, 1::2] = x * sin + y * cos
    return out.astype(F32)


def rope_frequencies(theta_base: float, head_dim: int) -> np.ndarray:
    """Per-pair angular frequencies: theta_base ** (-2i / head_dim)."""
    i = np.arange(head_dim // 2, dtype=np.float64)
    return theta_base ** (-2.0 * i / head_dim)


def rope_apply_positions(x: np.ndarray, positions: np.ndarray, theta_base: float) -> np.ndarray:
    """Rotate each row at its own absolute position (interleaved pairing)."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] % 2 != 0:
        raise ValueError(f"rope_apply_positions expects rows of even length, got shape {x.shape}")
    positions = np.asarray(positions, dtype=np.float64).reshape(-1)
    if positions.shape[0] != x.shape[0]:
        raise ValueError(f"need one position per row: {positions.shape[0]} != {x.shape[0]}")
    angles = positions[:, None] * rope_frequencies(theta_base, x.shape[1])[None, :]
    cos, sin = np.cos(angles), np.sin(angles)
    a = x[:, 0::2].astype(np.float64)
    b = x[:, 1::2].astype(np.float64)
    out = np.empty(x.shape, dtype=np.float64)
    out[:, 0::2] = a * cos - b * sin
    out[:, 1::2] = a * sin + b * cos
    return out.astype(F32)


def cos_sin_at(theta_base: float, head_dim: int, position: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact-position rotation angles for one absolute position."""
    angles = rope_frequencies(theta_base, head_dim) * float(position)
    return np.cos(angles).astype(F32), np.sin(angles).astype(F32)


def avg_future_cos_sin(params: RopeParams, n_f: int) -> tuple[np.ndarray, np.ndarray]:
    """Average cos/sin over the next ``n_f`` positions after the offset.

    Averaging rotations is a contraction, so rows rotated by these angles
    may shrink; they never grow.
    """
    if n_f < 1:
        raise ValueError(f"n_f must be >= 1, got {n_f}")
    freqs = rope_frequencies(params.theta_base, params.head_dim)
    positions = params.position_offset + 1 + np.arange(n_f, dtype=np.float64)
    angles = positions[:, None] * freqs[None, :]
    return np.cos(angles).mean(axis=0).astype(F32), np.sin(angles).mean(axis=0).astype(F32)

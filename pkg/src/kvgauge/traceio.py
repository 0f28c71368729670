"""Portable attention-trace format: a manifest plus raw tensor files.

A trace directory contains ``manifest.json`` and one file per tensor:
row-major 32-bit little-endian floats with no header (shapes live in the
manifest, alongside a SHA-256 of each payload). The mandatory version
field is ``"kvgauge-trace/1"``.

Per layer a trace stores:

=====================  ========================  =====================================
tensor                 shape                     contents
=====================  ========================  =====================================
``layer{l}.hidden``    (seq_len, d_h)            pre-attention layer-norm output rows
``layer{l}.keys``      (n_kv_heads, seq_len, d_k) post-RoPE keys, as cached
``layer{l}.values``    (n_kv_heads, seq_len, d_k) values, as cached
``layer{l}.wq``        (n_query_heads, d_h, d_k) per-query-head projection slices
``layer{l}.gt_queries`` (n_gt, n_query_heads, d_k) post-RoPE future queries
``layer{l}.gt_attn``   (n_gt, n_query_heads, seq_len) their attention rows over the prompt
=====================  ========================  =====================================

Keys, queries and ``wq`` output channels may be stored in either the
``interleaved`` or ``half`` rotary convention; the loader normalizes to
interleaved, so downstream keep-sets are identical either way.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .tensor_ops import F32

FORMAT_VERSION = "kvgauge-trace/1"
ATTN_ROW_SUM_TOL = 1e-4
ROPE_CONVENTIONS = ("interleaved", "half")


class TraceError(Exception):
    """Base class for trace validation failures."""


class TraceFileMissing(TraceError):
    pass


class TraceVersionError(TraceError):
    pass


class TraceShapeError(TraceError):
    pass


class TraceChecksumError(TraceError):
    pass


@dataclass
class TraceMeta:
    model: str
    n_layers: int
    n_kv_heads: int
    group_size: int
    d_k: int
    d_h: int
    seq_len: int
    theta_base: float
    rope_convention: str
    n_gt: int

    @property
    def n_query_heads(self) -> int:
        return self.n_kv_heads * self.group_size

    def validate(self) -> None:
        for name in ("n_layers", "n_kv_heads", "group_size", "d_k", "d_h", "seq_len", "n_gt"):
            if getattr(self, name) < 1:
                raise TraceError(f"meta.{name} must be >= 1, got {getattr(self, name)}")
        if self.d_k % 2 != 0:
            raise TraceError(f"meta.d_k must be even, got {self.d_k}")
        if self.theta_base <= 0:
            raise TraceError(f"meta.theta_base must be positive, got {self.theta_base}")
        if self.rope_convention not in ROPE_CONVENTIONS:
            raise TraceError(
                f"meta.rope_convention must be one of {ROPE_CONVENTIONS}, got {self.rope_convention!r}"
            )


@dataclass
class TraceBundle:
    """One request's per-layer attention inputs plus ground-truth future queries."""

    meta: TraceMeta
    hidden: list[np.ndarray] = field(repr=False)
    keys: list[np.ndarray] = field(repr=False)
    values: list[np.ndarray] = field(repr=False)
    w_q: list[np.ndarray] = field(repr=False)
    gt_queries: list[np.ndarray] = field(repr=False)
    gt_attn: list[np.ndarray] = field(repr=False)

    def validate(self) -> None:
        m = self.meta
        m.validate()
        expected = _expected_shapes(m)
        for name, shape in expected.items():
            arr = self._tensor(name)
            if tuple(arr.shape) != shape:
                raise TraceShapeError(f"tensor {name}: shape {tuple(arr.shape)} != expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise TraceError(f"tensor {name}: non-finite values")
        for l in range(m.n_layers):
            sums = self.gt_attn[l].astype(np.float64).sum(axis=-1)
            if np.any(np.abs(sums - 1.0) > ATTN_ROW_SUM_TOL):
                worst = float(np.max(np.abs(sums - 1.0)))
                raise TraceError(
                    f"layer{l}.gt_attn rows must sum to 1 within {ATTN_ROW_SUM_TOL} (worst off by {worst:.2e})"
                )

    def _tensor(self, name: str) -> np.ndarray:
        layer, kind = name.split(".", 1)
        l = int(layer.removeprefix("layer"))
        return {
            "hidden": self.hidden,
            "keys": self.keys,
            "values": self.values,
            "wq": self.w_q,
            "gt_queries": self.gt_queries,
            "gt_attn": self.gt_attn,
        }[kind][l]


def _expected_shapes(meta: TraceMeta) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for l in range(meta.n_layers):
        shapes[f"layer{l}.hidden"] = (meta.seq_len, meta.d_h)
        shapes[f"layer{l}.keys"] = (meta.n_kv_heads, meta.seq_len, meta.d_k)
        shapes[f"layer{l}.values"] = (meta.n_kv_heads, meta.seq_len, meta.d_k)
        shapes[f"layer{l}.wq"] = (meta.n_query_heads, meta.d_h, meta.d_k)
        shapes[f"layer{l}.gt_queries"] = (meta.n_gt, meta.n_query_heads, meta.d_k)
        shapes[f"layer{l}.gt_attn"] = (meta.n_gt, meta.n_query_heads, meta.seq_len)
    return shapes


def _half_to_interleaved_perm(d_k: int) -> np.ndarray:
    # half layout pairs channel i with i + d_k/2; interleaved puts them adjacent
    perm = np.empty(d_k, dtype=np.int64)
    perm[0::2] = np.arange(d_k // 2)
    perm[1::2] = np.arange(d_k // 2) + d_k // 2
    return perm


def normalize_convention(bundle: TraceBundle) -> TraceBundle:
    """Permute rotary-affected channels so the bundle is interleaved."""
    if bundle.meta.rope_convention == "interleaved":
        return bundle
    perm = _half_to_interleaved_perm(bundle.meta.d_k)
    bundle.keys = [k[..., perm] for k in bundle.keys]
    bundle.gt_queries = [q[..., perm] for q in bundle.gt_queries]
    bundle.w_q = [w[..., perm] for w in bundle.w_q]
    bundle.meta.rope_convention = "interleaved"
    return bundle


def save_trace(bundle: TraceBundle, path: str | Path) -> Path:
    """Write the bundle as a trace directory; returns the directory path."""
    bundle.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = {}
    for name in _expected_shapes(bundle.meta):
        arr = np.ascontiguousarray(bundle._tensor(name), dtype="<f4")
        payload = arr.tobytes()
        fname = f"{name}.bin"
        (path / fname).write_bytes(payload)
        tensors[name] = {
            "file": fname,
            "shape": list(arr.shape),
            "sha256": hashlib.sha256(payload).hexdigest(),
        }
    manifest = {
        "version": FORMAT_VERSION,
        "meta": asdict(bundle.meta),
        "tensors": tensors,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_trace(path: str | Path) -> TraceBundle:
    """Load and fully validate a trace directory.

    Raises :class:`TraceFileMissing`, :class:`TraceVersionError`,
    :class:`TraceChecksumError` or :class:`TraceShapeError` depending on
    what is wrong; generic semantic problems raise :class:`TraceError`.
    """
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise TraceFileMissing(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise TraceError(f"manifest is not valid JSON: {exc}") from exc
    version = manifest.get("version")
    if version != FORMAT_VERSION:
        raise TraceVersionError(f"unsupported trace version {version!r}, expected {FORMAT_VERSION!r}")
    try:
        meta = TraceMeta(**manifest["meta"])
    except (KeyError, TypeError) as exc:
        raise TraceError(f"malformed manifest meta: {exc}") from exc
    meta.validate()

    entries = manifest.get("tensors", {})
    arrays: dict[str, np.ndarray] = {}
    for name, shape in _expected_shapes(meta).items():
        entry = entries.get(name)
        if entry is None:
            raise TraceError(f"manifest lacks tensor entry {name!r}")
        fpath = path / entry["file"]
        if not fpath.is_file():
            raise TraceFileMissing(f"tensor {name}: missing file {fpath}")
        payload = fpath.read_bytes()
        digest = hashlib.sha256(payload).hexdigest()
        if digest != entry["sha256"]:
            raise TraceChecksumError(f"tensor {name}: checksum mismatch for {fpath}")
        declared = tuple(int(d) for d in entry["shape"])
        if len(payload) != int(np.prod(declared)) * 4:
            raise TraceShapeError(
                f"tensor {name}: payload holds {len(payload) // 4} floats, "
                f"manifest shape {declared} needs {int(np.prod(declared))}"
            )
        if declared != shape:
            raise TraceShapeError(f"tensor {name}: manifest shape {declared} != expected {shape}")
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(F32)

    bundle = TraceBundle(
        meta=meta,
        hidden=[arrays[f"layer{l}.hidden"] for l in range(meta.n_layers)],
        keys=[arrays[f"layer{l}.keys"] for l in range(meta.n_layers)],
        values=[arrays[f"layer{l}.values"] for l in range(meta.n_layers)],
        w_q=[arrays[f"layer{l}.wq"] for l in range(meta.n_layers)],
        gt_queries=[arrays[f"layer{l}.gt_queries"] for l in range(meta.n_layers)],
        gt_attn=[arrays[f"layer{l}.gt_attn"] for l in range(meta.n_layers)],
    )
    bundle = normalize_convention(bundle)
    bundle.validate()
    return bundle

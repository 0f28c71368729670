"""Extract `kvgauge-trace/1` directories from Hugging Face causal LMs.

The exporter runs one prefill pass over the prompt, capturing per layer
the pre-attention layer-norm output (the query projection's input), the
post-RoPE key/value cache exactly as the model stored it, and each query
head's projection slice. It then greedily decodes ``n_gt`` continuation
steps, recording every step's post-RoPE queries and its attention rows
restricted to the prompt (renormalized, which equals a softmax over the
prompt keys alone).

Only plain rotary embeddings and bias-free query projections can be
represented in the trace format; anything else raises
:class:`UnsupportedArchitectureError`. Keys and queries are written in the
``half`` rotary convention (the consumer normalizes it). All tensors are
cast to float32 at the hook boundary.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = "kvgauge-trace/1"
MIN_PROMPT_TOKENS = 6  # default sink exclusion (4) + 2 rows for the Gaussian fit


class UnsupportedArchitectureError(RuntimeError):
    """The model's attention variant cannot be represented in the trace format."""


@dataclass
class ExportConfig:
    model: str = ""
    prompt: str | None = None
    token_ids: list[int] | None = None
    n_gt: int = 4
    layers: list[int] | None = None  # optional filter; exported layers are renumbered
    out_dir: str | Path = "trace"

    def validate(self) -> None:
        if self.n_gt < 1:
            raise ValueError(f"n_gt must be >= 1, got {self.n_gt}")
        if self.prompt is None and self.token_ids is None:
            raise ValueError("provide a prompt or explicit token ids")


@dataclass
class _LayerCapture:
    hidden: torch.Tensor | None = None  # (1, L or 1, d_h) post-norm
    step_hidden: list[torch.Tensor] = field(default_factory=list)


def _check_architecture(model) -> None:
    cfg = model.config
    scaling = getattr(cfg, "rope_scaling", None)
    if scaling is not None:
        rope_type = scaling.get("rope_type", scaling.get("type", "default"))
        if rope_type != "default":
            raise UnsupportedArchitectureError(
                f"rope scaling {rope_type!r} cannot be represented (plain rotary only)"
            )
    try:
        layers = model.model.layers
    except AttributeError as exc:
        raise UnsupportedArchitectureError(f"unfamiliar model structure: {exc}") from exc
    for i, layer in enumerate(layers):
        attn = layer.self_attn
        if getattr(attn.q_proj, "bias", None) is not None:
            raise UnsupportedArchitectureError(
                f"layer {i}: biased query projection cannot be represented"
            )
        if not hasattr(layer, "input_layernorm"):
            raise UnsupportedArchitectureError(f"layer {i}: no input_layernorm to hook")


def _head_dim(model) -> int:
    cfg = model.config
    d = getattr(cfg, "head_dim", None)
    return int(d) if d else cfg.hidden_size // cfg.num_attention_heads


def _resolve_tokens(cfg: ExportConfig, tokenizer) -> list[int]:
    if cfg.token_ids is not None:
        tokens = [int(t) for t in cfg.token_ids]
    else:
        if tokenizer is None:
            raise ValueError("a tokenizer is required when prompt text is given")
        tokens = tokenizer(cfg.prompt, return_tensors=None)["input_ids"]
    if len(tokens) < MIN_PROMPT_TOKENS:
        raise ValueError(
            f"prompt has {len(tokens)} tokens; need >= {MIN_PROMPT_TOKENS} "
            "(sink exclusion plus two rows for the distribution fit)"
        )
    return tokens


def export_trace(cfg: ExportConfig, model=None, tokenizer=None) -> Path:
    """Run the model on the prompt and write a validated trace directory."""
    cfg.validate()
    if model is None:
        from transformers import AutoModelForCausalLM, AutoTokenizer

        model = AutoModelForCausalLM.from_pretrained(cfg.model, attn_implementation="eager")
        if tokenizer is None and cfg.prompt is not None:
            tokenizer = AutoTokenizer.from_pretrained(cfg.model)
    model = model.eval()
    if model.config._attn_implementation != "eager":
        model.config._attn_implementation = "eager"  # attention weights must be materialized
    _check_architecture(model)

    tokens = _resolve_tokens(cfg, tokenizer)
    seq_len = len(tokens)
    mcfg = model.config
    n_layers_total = mcfg.num_hidden_layers
    layer_ids = list(range(n_layers_total)) if cfg.layers is None else sorted(set(cfg.layers))
    if any(l < 0 or l >= n_layers_total for l in layer_ids):
        raise ValueError(f"layer filter {layer_ids} outside [0, {n_layers_total})")
    n_q = mcfg.num_attention_heads
    n_kv = getattr(mcfg, "num_key_value_heads", n_q) or n_q
    if n_q % n_kv != 0:
        raise UnsupportedArchitectureError(f"query heads {n_q} not a multiple of kv heads {n_kv}")
    d_k = _head_dim(model)
    if d_k % 2 != 0:
        raise UnsupportedArchitectureError(f"odd head dimension {d_k}")
    d_h = mcfg.hidden_size
    theta = float(getattr(mcfg, "rope_theta", 10_000.0))

    captures = {l: _LayerCapture() for l in layer_ids}
    hooks = []
    prefill_done = False

    def make_hook(layer_id):
        def hook(_mod, _args, output):
            if prefill_done:
                captures[layer_id].step_hidden.append(output.detach().float())
            else:
                captures[layer_id].hidden = output.detach().float()

        return hook

    for l in layer_ids:
        hooks.append(model.model.layers[l].input_layernorm.register_forward_hook(make_hook(l)))

    ids = torch.tensor([tokens], dtype=torch.long)
    step_attn: dict[int, list[torch.Tensor]] = {l: [] for l in layer_ids}
    step_positions: list[int] = []
    try:
        with torch.no_grad():
            out = model(input_ids=ids, use_cache=True)
            cache = out.past_key_values
            prefill_done = True
            next_id = int(out.logits[0, -1].argmax())
            for t in range(cfg.n_gt):
                step_positions.append(seq_len + t)
                step = model(
                    input_ids=torch.tensor([[next_id]], dtype=torch.long),
                    past_key_values=cache,
                    use_cache=True,
                    output_attentions=True,
                )
                for l in layer_ids:
                    step_attn[l].append(step.attentions[l][0, :, 0, :].detach().float())
                cache = step.past_key_values
                next_id = int(step.logits[0, -1].argmax())
    finally:
        for h in hooks:
            h.remove()

    rotary = model.model.rotary_emb
    tensors: dict[str, np.ndarray] = {}
    for out_idx, l in enumerate(layer_ids):
        cap = captures[l]
        hidden = cap.hidden[0]  # (L, d_h)
        keys = cache.layers[l].keys[0, :, :seq_len].detach().float()  # (n_kv, L, d_k)
        values = cache.layers[l].values[0, :, :seq_len].detach().float()
        w_q = model.model.layers[l].self_attn.q_proj.weight.detach().float()
        wq_slices = torch.stack([w_q[q * d_k : (q + 1) * d_k, :].T for q in range(n_q)])

        gt_q = torch.empty(cfg.n_gt, n_q, d_k)
        gt_a = torch.empty(cfg.n_gt, n_q, seq_len)
        for t, pos in enumerate(step_positions):
            h_t = cap.step_hidden[t][0, 0]  # (d_h,)
            pos_t = torch.tensor([[pos]])
            cos, sin = rotary(cap.step_hidden[t], pos_t)
            cos, sin = cos[0, 0].float(), sin[0, 0].float()
            for q in range(n_q):
                q_pre = h_t @ wq_slices[q]
                gt_q[t, q] = q_pre * cos + _rotate_half(q_pre) * sin
            prompt_rows = step_attn[l][t][:, :seq_len].double()
            gt_a[t] = (prompt_rows / prompt_rows.sum(dim=-1, keepdim=True)).float()

        prefix = f"layer{out_idx}"
        tensors[f"{prefix}.hidden"] = hidden.numpy()
        tensors[f"{prefix}.keys"] = keys.numpy()
        tensors[f"{prefix}.values"] = values.numpy()
        tensors[f"{prefix}.wq"] = wq_slices.numpy()
        tensors[f"{prefix}.gt_queries"] = gt_q.numpy()
        tensors[f"{prefix}.gt_attn"] = gt_a.numpy()

    _self_check(tensors, layer_ids, d_k, seq_len)

    meta = {
        "model": cfg.model or model.config.name_or_path or "in-memory-model",
        "n_layers": len(layer_ids),
        "n_kv_heads": n_kv,
        "group_size": n_q // n_kv,
        "d_k": d_k,
        "d_h": d_h,
        "seq_len": seq_len,
        "theta_base": theta,
        "rope_convention": "half",
        "n_gt": cfg.n_gt,
    }
    return _write_trace(Path(cfg.out_dir), meta, tensors)


def _rotate_half(x: torch.Tensor) -> torch.Tensor:
    half = x.shape[-1] // 2
    return torch.cat([-x[..., half:], x[..., :half]], dim=-1)


def _self_check(tensors, layer_ids, d_k, seq_len, tol=1e-4) -> None:
    """Recompute the first recorded attention row from exported q/K."""
    q = torch.from_numpy(tensors["layer0.gt_queries"][0, 0]).double()
    keys = torch.from_numpy(tensors["layer0.keys"][0]).double()
    logits = keys @ q / np.sqrt(d_k)
    recomputed = torch.softmax(logits, dim=-1).numpy()
    recorded = tensors["layer0.gt_attn"][0, 0]
    worst = float(np.abs(recomputed - recorded).max())
    if worst > tol:
        raise RuntimeError(
            f"exported tensors are inconsistent: recomputed attention row "
            f"deviates from the recorded one by {worst:.2e} (> {tol})"
        )


def _write_trace(out_dir: Path, meta: dict, tensors: dict[str, np.ndarray]) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in tensors.items():
        payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        fname = f"{name}.bin"
        (out_dir / fname).write_bytes(payload)
        entries[name] = {
            "file": fname,
            "shape": list(arr.shape),
            "sha256": hashlib.sha256(payload).hexdigest(),
        }
    manifest = {"version": FORMAT_VERSION, "meta": meta, "tensors": entries}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out_dir

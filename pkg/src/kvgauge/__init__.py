"""kvgauge: adaptive and fixed-budget KV-cache compression with a
desk-scale evaluation harness over portable attention traces."""

from .cache import NonUniformCache, prune, varlen_attention
from .harness import (
    MetricsRecord,
    OverlapRecord,
    overlap_analysis,
    run_policy,
    sweep,
)
from .metrics import attention_overlap, output_cosine, pearson
from .policies import (
    GVoteConfig,
    GVoteResult,
    HeadInputs,
    RequestKeepSets,
    compress_request,
    gvote_compress,
    policy_adakv,
    policy_snapkv,
    policy_streamllm,
)
from .select import CandidateSet, KeepMask, top_k_rows, top_p_select, union_sets
from .synth import SynthSpec, generate_synth
from .tensor_ops import (
    RopeParams,
    avg_future_cos_sin,
    derive_seed,
    gaussian_sample,
    matmul,
    rope_apply,
    row_mean_var,
    softmax_rows,
)
from .traceio import (
    TraceBundle,
    TraceChecksumError,
    TraceError,
    TraceFileMissing,
    TraceMeta,
    TraceShapeError,
    TraceVersionError,
    load_trace,
    save_trace,
)

__version__ = "0.1.0"

__all__ = [
    "CandidateSet",
    "GVoteConfig",
    "GVoteResult",
    "HeadInputs",
    "KeepMask",
    "MetricsRecord",
    "NonUniformCache",
    "OverlapRecord",
    "RequestKeepSets",
    "RopeParams",
    "SynthSpec",
    "TraceBundle",
    "TraceChecksumError",
    "TraceError",
    "TraceFileMissing",
    "TraceMeta",
    "TraceShapeError",
    "TraceVersionError",
    "attention_overlap",
    "avg_future_cos_sin",
    "compress_request",
    "derive_seed",
    "gaussian_sample",
    "generate_synth",
    "gvote_compress",
    "load_trace",
    "matmul",
    "output_cosine",
    "overlap_analysis",
    "pearson",
    "policy_adakv",
    "policy_snapkv",
    "policy_streamllm",
    "prune",
    "rope_apply",
    "row_mean_var",
    "run_policy",
    "save_trace",
    "softmax_rows",
    "sweep",
    "top_k_rows",
    "top_p_select",
    "union_sets",
    "varlen_attention",
]

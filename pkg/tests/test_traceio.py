import json

import numpy as np
import pytest

from kvgauge.policies import GVoteConfig, compress_request
from kvgauge.synth import SynthSpec, channel_params, generate_synth, salient_positions
from kvgauge.traceio import (
    TraceChecksumError,
    TraceError,
    TraceFileMissing,
    TraceShapeError,
    TraceVersionError,
    load_trace,
    save_trace,
)


@pytest.fixture()
def trace_dir(tmp_path, small_trace):
    return save_trace(small_trace, tmp_path / "trace")


class TestRoundTrip:
    def test_save_load_is_identity(self, trace_dir, small_trace):
        loaded = load_trace(trace_dir)
        assert loaded.meta == small_trace.meta
        for l in range(small_trace.meta.n_layers):
            assert loaded.hidden[l].tobytes() == small_trace.hidden[l].tobytes()
            assert loaded.keys[l].tobytes() == small_trace.keys[l].tobytes()
            assert loaded.values[l].tobytes() == small_trace.values[l].tobytes()
            assert loaded.w_q[l].tobytes() == small_trace.w_q[l].tobytes()
            assert loaded.gt_queries[l].tobytes() == small_trace.gt_queries[l].tobytes()
            assert loaded.gt_attn[l].tobytes() == small_trace.gt_attn[l].tobytes()

    def test_truncated_tensor_fails_checksum(self, trace_dir):
        victim = trace_dir / "layer0.keys.bin"
        victim.write_bytes(victim.read_bytes()[:-8])
        with pytest.raises(TraceChecksumError, match="layer0.keys"):
            load_trace(trace_dir)

    def test_edited_manifest_dims_fail_shape_check(self, trace_dir):
        manifest = json.loads((trace_dir / "manifest.json").read_text())
        manifest["tensors"]["layer0.hidden"]["shape"][0] += 1
        (trace_dir / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(TraceShapeError, match="layer0.hidden"):
            load_trace(trace_dir)

    def test_missing_tensor_file(self, trace_dir):
        (trace_dir / "layer0.values.bin").unlink()
        with pytest.raises(TraceFileMissing, match="layer0.values"):
            load_trace(trace_dir)

    def test_bad_version_rejected(self, trace_dir):
        manifest = json.loads((trace_dir / "manifest.json").read_text())
        manifest["version"] = "kvgauge-trace/99"
        (trace_dir / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(TraceVersionError, match="kvgauge-trace/99"):
            load_trace(trace_dir)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(TraceFileMissing, match="manifest"):
            load_trace(tmp_path / "nope")

    def test_corrupted_attention_rows_rejected(self, trace_dir):
        raw = np.frombuffer((trace_dir / "layer0.gt_attn.bin").read_bytes(), dtype="<f4").copy()
        raw *= 2.0
        payload = raw.tobytes()
        (trace_dir / "layer0.gt_attn.bin").write_bytes(payload)
        manifest = json.loads((trace_dir / "manifest.json").read_text())
        import hashlib

        manifest["tensors"]["layer0.gt_attn"]["sha256"] = hashlib.sha256(payload).hexdigest()
        (trace_dir / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(TraceError, match="sum to 1"):
            load_trace(trace_dir)


class TestRopeConvention:
    def test_half_convention_normalizes_to_same_keepsets(self, tmp_path, small_trace):
        d_k = small_trace.meta.d_k
        # interleaved -> half permutation (inverse of the loader's)
        inv = np.empty(d_k, dtype=np.int64)
        inv[np.arange(0, d_k, 2) // 2] = np.arange(0, d_k, 2)
        inv[np.arange(1, d_k, 2) // 2 + d_k // 2] = np.arange(1, d_k, 2)

        import copy

        half = copy.deepcopy(small_trace)
        half.keys = [k[..., inv] for k in half.keys]
        half.gt_queries = [q[..., inv] for q in half.gt_queries]
        half.w_q = [w[..., inv] for w in half.w_q]
        half.meta.rope_convention = "half"

        d1 = save_trace(small_trace, tmp_path / "interleaved")
        d2 = save_trace(half, tmp_path / "half")
        t1 = load_trace(d1)
        t2 = load_trace(d2)
        assert t2.meta.rope_convention == "interleaved"
        cfg = GVoteConfig(seed=5)
        r1 = compress_request(t1, "gvote", gvote=cfg)
        r2 = compress_request(t2, "gvote", gvote=cfg)
        for la, lb in zip(r1.keepsets, r2.keepsets):
            for sa, sb in zip(la, lb):
                assert sa.indices.tolist() == sb.indices.tolist()


class TestSynth:
    def test_deterministic_per_seed(self):
        spec = SynthSpec(seq_len=64, d_k=8, d_h=12, seed=5)
        a = generate_synth(spec)
        b = generate_synth(spec)
        assert a.keys[0].tobytes() == b.keys[0].tobytes()
        assert a.gt_attn[0].tobytes() == b.gt_attn[0].tobytes()

    def test_gt_attention_rows_sum_to_one(self, gqa_trace):
        for layer_attn in gqa_trace.gt_attn:
            sums = layer_attn.astype(np.float64).sum(axis=-1)
            assert np.all(np.abs(sums - 1.0) < 1e-5)

    def test_noiseless_single_cluster_concentrates_attention(self):
        spec = SynthSpec(
            seq_len=256, d_k=16, d_h=24, noise_scale=0.0, sink_strength=0.0, cluster_count=1, seed=9, n_gt=3
        )
        trace = generate_synth(spec)
        cluster = set(salient_positions(spec, 0).tolist())
        for t in range(spec.n_gt):
            row = trace.gt_attn[0][t, 0].astype(np.float64)
            assert row[sorted(cluster)].sum() > 0.95

    def test_hidden_channels_match_declared_gaussian(self):
        spec = SynthSpec(seq_len=2048, d_k=8, d_h=16, seed=21)
        trace = generate_synth(spec)
        mu, sigma = channel_params(spec, 0)
        h = trace.hidden[0].astype(np.float64)
        se_mean = sigma / np.sqrt(spec.seq_len)
        assert np.all(np.abs(h.mean(axis=0) - mu) < 5 * se_mean)
        # var of sample variance ~ 2 sigma^4 / n for Gaussian data
        se_var = sigma**2 * np.sqrt(2.0 / spec.seq_len)
        assert np.all(np.abs(h.var(axis=0) - sigma**2) < 5 * se_var)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SynthSpec(seq_len=2).validate()
        with pytest.raises(ValueError):
            SynthSpec(d_k=7).validate()
        with pytest.raises(ValueError):
            SynthSpec(noise_scale=-1.0).validate()
        with pytest.raises(ValueError):
            SynthSpec(cluster_count=0).validate()

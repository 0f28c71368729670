import numpy as np
import pytest

from kvgauge.policies import (
    GVoteConfig,
    HeadInputs,
    compress_request,
    gvote_compress,
    policy_adakv,
    policy_snapkv,
    policy_streamllm,
)
from kvgauge.select import CandidateSet
from kvgauge.tensor_ops import RopeParams, derive_seed, matmul, rope_apply_positions, softmax_rows
from oracles import gvote_oracle, top_k_sort_oracle


def make_head_inputs(rng, seq_len=24, d_k=8, d_h=12, group=1, theta=10_000.0):
    hidden = rng.normal(size=(seq_len, d_h)).astype(np.float32)
    keys = rng.normal(size=(seq_len, d_k)).astype(np.float32)
    values = rng.normal(size=(seq_len, d_k)).astype(np.float32)
    w_q = rng.normal(size=(group, d_h, d_k)).astype(np.float32)
    q_pre = np.stack([hidden[-1] @ w_q[j] for j in range(group)]).astype(np.float32)
    q_cur = rope_apply_positions(q_pre, np.full(group, seq_len - 1), theta)
    rope = RopeParams(theta, d_k, position_offset=seq_len)
    return HeadInputs(keys=keys, values=values, hidden=hidden, w_q=w_q, q_current=q_cur, rope=rope)


class TestGVote:
    def test_full_budget_degeneracy_keeps_everything(self, rng):
        inputs = make_head_inputs(rng, seq_len=12)
        res = gvote_compress(inputs, GVoteConfig(p_nuc=1.0, samples=2, n_s=0, seed=1))
        assert res.b_step == 12
        assert res.keep.indices.tolist() == list(range(12))
        assert not res.fallback

    def test_determinism(self, rng):
        inputs = make_head_inputs(rng)
        cfg = GVoteConfig(seed=42, samples=4)
        a = gvote_compress(inputs, cfg)
        b = gvote_compress(inputs, cfg)
        assert a.keep.indices.tolist() == b.keep.indices.tolist()
        assert a.b_step == b.b_step

    @pytest.mark.parametrize("group", [1, 2])
    @pytest.mark.parametrize("include_current", [True, False])
    def test_matches_scalar_oracle(self, rng, group, include_current):
        inputs = make_head_inputs(rng, seq_len=16, d_k=4, d_h=6, group=group)
        cfg = GVoteConfig(p_nuc=0.9, samples=3, n_f=8, n_s=2, seed=7, include_current=include_current)
        res = gvote_compress(inputs, cfg)
        expected, b_step = gvote_oracle(
            inputs.keys.tolist(),
            inputs.hidden.tolist(),
            [w.tolist() for w in inputs.w_q],
            inputs.q_current.tolist(),
            theta=inputs.rope.theta_base,
            position_offset=inputs.rope.position_offset,
            p_nuc=cfg.p_nuc,
            samples=cfg.samples,
            n_f=cfg.n_f,
            n_s=cfg.n_s,
            seed=cfg.seed,
            include_current=cfg.include_current,
        )
        assert res.keep.indices.tolist() == expected
        assert res.b_step == b_step

    def test_current_set_contained_when_included(self, rng):
        inputs = make_head_inputs(rng, seq_len=40)
        res = gvote_compress(inputs, GVoteConfig(seed=3))
        assert set(res.current_set.indices.tolist()) <= set(res.keep.indices.tolist())

    def test_size_bounds(self, rng):
        for trial in range(20):
            inputs = make_head_inputs(rng, seq_len=32)
            cfg = GVoteConfig(p_nuc=0.8, samples=3, seed=trial)
            res = gvote_compress(inputs, cfg)
            rows = cfg.samples * inputs.group_size
            assert res.b_step <= len(res.keep) <= min(rows * res.b_step + res.b_step, 32)

    def test_union_monotone_in_sample_count(self, rng):
        inputs = make_head_inputs(rng, seq_len=48)
        base = GVoteConfig(p_nuc=0.9, samples=2, seed=11)
        more = GVoteConfig(p_nuc=0.9, samples=6, seed=11)
        small = gvote_compress(inputs, base)
        large = gvote_compress(inputs, more)
        assert small.b_step == large.b_step
        assert set(small.keep.indices.tolist()) <= set(large.keep.indices.tolist())

    def test_degenerate_statistics_window_falls_back(self, rng):
        inputs = make_head_inputs(rng, seq_len=5)
        res = gvote_compress(inputs, GVoteConfig(n_s=4, seed=0))
        assert res.fallback
        assert res.keep.indices.tolist() == list(range(5))

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            GVoteConfig(p_nuc=0.0)
        with pytest.raises(ValueError):
            GVoteConfig(samples=0)
        with pytest.raises(ValueError):
            GVoteConfig(n_f=0)
        with pytest.raises(ValueError):
            GVoteConfig(n_s=-1)


class TestStreamLLM:
    def test_analytic(self):
        got = policy_streamllm(10, 2, 3)
        assert got.indices.tolist() == [0, 1, 7, 8, 9]

    def test_window_covering_sequence_keeps_all(self):
        got = policy_streamllm(6, 0, 10)
        assert got.indices.tolist() == list(range(6))

    def test_random_grid_matches_set_oracle(self, rng):
        for _ in range(50):
            seq_len = int(rng.integers(1, 40))
            n_sink = int(rng.integers(0, 6))
            window = int(rng.integers(0, 20))
            if n_sink + window < 1:
                continue
            got = policy_streamllm(seq_len, n_sink, window)
            expected = sorted(
                set(range(min(n_sink, seq_len))) | set(range(max(0, seq_len - window), seq_len))
            )
            assert got.indices.tolist() == expected

    def test_rejects_empty_selection(self):
        with pytest.raises(ValueError):
            policy_streamllm(4, 0, 0)


class TestSnapKV:
    def test_full_budget_keeps_all(self, rng):
        attn = softmax_rows(rng.normal(size=(2, 12)).astype(np.float32))
        got = policy_snapkv(attn, budget=12, obs_window=2)
        assert got.indices.tolist() == list(range(12))

    def test_single_row_reduces_to_top_k_plus_tail(self, rng):
        attn = softmax_rows(rng.normal(size=(1, 10)).astype(np.float32))
        got = policy_snapkv(attn, budget=4, obs_window=1)
        prefix = top_k_sort_oracle(attn[0, :9], 3)
        assert got.indices.tolist() == sorted(prefix + [9])

    def test_matches_scoring_oracle(self, rng):
        attn = softmax_rows(rng.normal(size=(4, 32)).astype(np.float32))
        budget, w = 11, 4
        got = policy_snapkv(attn, budget, w)
        scores = attn[:, : 32 - w].astype(np.float64).mean(axis=0)
        prefix = top_k_sort_oracle(scores, budget - w)
        expected = sorted(prefix + list(range(32 - w, 32)))
        assert got.indices.tolist() == expected

    def test_budget_below_window_rejected(self):
        with pytest.raises(ValueError, match="budget"):
            policy_snapkv(np.full((3, 8), 0.125), budget=2, obs_window=3)


class TestAdaKV:
    def test_single_head_reduces_to_top_k(self, rng):
        scores = rng.uniform(size=(1, 9))
        (got,) = policy_adakv(scores, 4)
        assert got.indices.tolist() == top_k_sort_oracle(scores[0], 4)

    def test_full_budget_keeps_everything(self, rng):
        scores = rng.uniform(size=(3, 5))
        sets = policy_adakv(scores, 15)
        assert all(s.indices.tolist() == list(range(5)) for s in sets)

    def test_matches_global_sort_oracle(self, rng):
        scores = rng.uniform(size=(3, 8))
        budget = 10
        sets = policy_adakv(scores, budget)
        flat = [(-(scores[h, i]), h, i) for h in range(3) for i in range(8)]
        expected_cells = sorted(flat)[:budget]
        per_head = {h: sorted(i for _, hh, i in expected_cells if hh == h) for h in range(3)}
        for h in range(3):
            assert sets[h].indices.tolist() == per_head[h]
        assert sum(len(s) for s in sets) == budget

    def test_budget_exceeding_cells_rejected(self):
        with pytest.raises(ValueError, match="budget"):
            policy_adakv(np.ones((2, 3)), 7)

    def test_rejects_negative_scores(self):
        with pytest.raises(ValueError, match="nonnegative"):
            policy_adakv(np.array([[0.5, -0.1]]), 1)


class TestCompressRequest:
    def test_single_cell_equals_single_head_op(self, small_trace):
        cfg = GVoteConfig(seed=9)
        req = compress_request(small_trace, "gvote", gvote=cfg)
        meta = small_trace.meta
        L = meta.seq_len
        q_pre = matmul(small_trace.hidden[0][-1:], small_trace.w_q[0][0])
        q_cur = rope_apply_positions(q_pre, np.array([L - 1]), meta.theta_base)
        inputs = HeadInputs(
            keys=small_trace.keys[0][0],
            values=small_trace.values[0][0],
            hidden=small_trace.hidden[0],
            w_q=small_trace.w_q[0][0],
            q_current=q_cur,
            rope=RopeParams(meta.theta_base, meta.d_k, position_offset=L),
        )
        direct = gvote_compress(inputs, GVoteConfig(seed=derive_seed(9, 0, 0)))
        assert req.keepsets[0][0].indices.tolist() == direct.keep.indices.tolist()

    def test_keepall_usage_is_one(self, small_trace):
        req = compress_request(small_trace, "keepall")
        assert req.usage_ratio == 1.0

    def test_composition_matches_loop_of_single_heads(self, gqa_trace):
        req = compress_request(gqa_trace, "streamllm", ratio=0.25)
        meta = gqa_trace.meta
        budget = round(0.25 * meta.seq_len)
        for layer_sets in req.keepsets:
            for got in layer_sets:
                expected = policy_streamllm(meta.seq_len, min(4, budget), budget - min(4, budget))
                assert got.indices.tolist() == expected.indices.tolist()

    def test_fixed_budget_policies_demand_ratio(self, small_trace):
        with pytest.raises(ValueError, match="ratio"):
            compress_request(small_trace, "snapkv")

    def test_unknown_policy_rejected(self, small_trace):
        with pytest.raises(ValueError, match="unknown policy"):
            compress_request(small_trace, "h2o")

    def test_adakv_budget_exact(self, gqa_trace):
        meta = gqa_trace.meta
        req = compress_request(gqa_trace, "adakv", ratio=0.2)
        budget = round(0.2 * meta.n_kv_heads * meta.seq_len)
        for layer_sets in req.keepsets:
            assert sum(len(s) for s in layer_sets) == budget

    def test_gqa_aggregation_deterministic(self, gqa_trace):
        a = compress_request(gqa_trace, "gvote", gvote=GVoteConfig(seed=1))
        b = compress_request(gqa_trace, "gvote", gvote=GVoteConfig(seed=1))
        for la, lb in zip(a.keepsets, b.keepsets):
            for sa, sb in zip(la, lb):
                assert sa.indices.tolist() == sb.indices.tolist()

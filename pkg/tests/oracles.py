"""Independent scalar oracles used to cross-check the vectorized code.

Everything here is deliberately written with plain Python loops, floats
and sets, so the only thing shared with the implementation under test is
the counter-based Gaussian stream (where a test says so).
"""

from __future__ import annotations

import math

import numpy as np


def matmul_loops(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += float(a[i][t]) * float(b[t][j])
            out[i][j] = acc
    return out


def softmax_scalar(row):
    m = max(float(x) for x in row)
    exps = [math.exp(float(x) - m) for x in row]
    s = sum(exps)
    return [e / s for e in exps]


def mean_var_two_pass(rows, skip_first=0):
    body = [list(map(float, r)) for r in rows[skip_first:]]
    n, d = len(body), len(body[0])
    mu = [sum(r[c] for r in body) / n for c in range(d)]
    var = [sum((r[c] - mu[c]) ** 2 for r in body) / n for c in range(d)]
    return mu, var


def pearson_two_pass(a, b):
    a = list(map(float, a))
    b = list(map(float, b))
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / math.sqrt(va * vb)


def top_p_sort_oracle(probs, p):
    """Sort descending (ties by lower index), take the shortest prefix >= p."""
    order = sorted(range(len(probs)), key=lambda i: (-float(probs[i]), i))
    acc = 0.0
    chosen = []
    for i in order:
        if acc >= p:
            break
        chosen.append(i)
        acc += float(probs[i])
    if acc < p:  # float shortfall at p ~ 1: all nonzero-probability entries
        chosen = [i for i in order if probs[i] > 0]
    return sorted(chosen)


def top_k_sort_oracle(row, k):
    order = sorted(range(len(row)), key=lambda i: (-float(row[i]), i))
    return sorted(order[: min(k, len(row))])


def avg_cos_sin_loops(theta, d_k, offset, n_f):
    half = d_k // 2
    cos = [0.0] * half
    sin = [0.0] * half
    for i in range(half):
        omega = theta ** (-2.0 * i / d_k)
        for j in range(1, n_f + 1):
            cos[i] += math.cos(omega * (offset + j))
            sin[i] += math.sin(omega * (offset + j))
        cos[i] /= n_f
        sin[i] /= n_f
    return cos, sin


def rope_rows_scalar(rows, cos, sin):
    out = []
    for r in rows:
        o = [0.0] * len(r)
        for i in range(len(r) // 2):
            x, y = float(r[2 * i]), float(r[2 * i + 1])
            o[2 * i] = x * cos[i] - y * sin[i]
            o[2 * i + 1] = x * sin[i] + y * cos[i]
        out.append(o)
    return out


def attention_row_scalar(q, keys):
    d_k = len(q)
    logits = [sum(float(q[c]) * float(k[c]) for c in range(d_k)) / math.sqrt(d_k) for k in keys]
    return softmax_scalar(logits)


def gvote_oracle(
    keys,
    hidden,
    w_q,
    q_current,
    *,
    theta,
    position_offset,
    p_nuc,
    samples,
    n_f,
    n_s,
    seed,
    include_current,
):
    """Step-by-step scalar walk of the adaptive compression procedure.

    Shares the Philox Gaussian stream with the implementation (the draw on
    line marked below); every other number comes from scalar loops.
    """
    seq_len, d_k = len(keys), len(keys[0])
    group = len(w_q)
    if seq_len - n_s < 2:
        return list(range(seq_len)), seq_len

    rows = [attention_row_scalar(q_current[j], keys) for j in range(group)]
    a0 = [sum(r[i] for r in rows) / group for i in range(seq_len)]
    c0 = top_p_sort_oracle(a0, p_nuc)
    b_step = len(c0)

    mu, var = mean_var_two_pass(hidden, n_s)
    z = np.random.Generator(np.random.Philox(key=np.uint64(seed))).standard_normal(
        (samples, len(mu))
    )  # shared stream
    h_samples = [
        [mu[c] + math.sqrt(var[c]) * float(z[s, c]) for c in range(len(mu))]
        for s in range(samples)
    ]

    cos, sin = avg_cos_sin_loops(theta, d_k, position_offset, n_f)
    keep: set[int] = set(c0) if include_current else set()
    for j in range(group):
        q_pre = matmul_loops(h_samples, w_q[j])
        q_rot = rope_rows_scalar(q_pre, cos, sin)
        for s in range(samples):
            logits = [
                sum(q_rot[s][c] * float(keys[i][c]) for c in range(d_k)) / math.sqrt(d_k)
                for i in range(seq_len)
            ]
            keep.update(top_k_sort_oracle(logits, b_step))
    return sorted(keep), b_step


def dense_masked_attention(q, keys, values, keep_mask):
    """Full attention with dropped positions forced to -inf before softmax."""
    d_k = len(q)
    logits = []
    for i, k in enumerate(keys):
        if keep_mask[i]:
            logits.append(sum(float(q[c]) * float(k[c]) for c in range(d_k)) / math.sqrt(d_k))
        else:
            logits.append(-math.inf)
    m = max(logits)
    exps = [math.exp(x - m) if x != -math.inf else 0.0 for x in logits]
    s = sum(exps)
    weights = [e / s for e in exps]
    out = [0.0] * len(values[0])
    for i, v in enumerate(values):
        for c in range(len(v)):
            out[c] += weights[i] * float(v[c])
    return out

import numpy as np
import pytest

from kvgauge.synth import SynthSpec, generate_synth


@pytest.fixture(scope="session")
def small_trace():
    """1 layer, 2 MHA heads, short sequence; enough for most harness tests."""
    return generate_synth(
        SynthSpec(n_layers=1, n_kv_heads=2, d_k=16, d_h=24, seq_len=96, seed=101, n_gt=2)
    )


@pytest.fixture(scope="session")
def gqa_trace():
    """2 layers, grouped queries (2 query heads per kv head)."""
    return generate_synth(
        SynthSpec(
            n_layers=2,
            n_kv_heads=2,
            group_size=2,
            d_k=16,
            d_h=32,
            seq_len=128,
            seed=77,
            n_gt=2,
            cluster_count=2,
        )
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)

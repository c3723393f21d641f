import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vitaccel import EncoderConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(seed: int, mode: str = "relu0") -> EncoderConfig:
    """Seeded tiny encoder config (d <= 16, N <= 8, 1-2 layers).

    Modes: relu0 (relu, ffn2 pruning at threshold 0), gelu (tanh gelu, no
    ffn2 pruning), pruned (2 layers, token pruning at layer 2 plus ffn2
    pruning at a positive threshold).
    """
    r = np.random.default_rng(seed)
    heads = int(r.choice([1, 2]))
    head_dim = int(r.choice([4, 8]))
    d = heads * head_dim
    n = int(r.integers(4, 9))
    num_layers = int(r.integers(1, 3))
    ffn = int(r.choice([8, 16]))
    if mode == "relu0":
        return EncoderConfig(num_layers, d, heads, head_dim, ffn, n,
                             ffn2_thresholds=(0.0,) * num_layers,
                             ffn2_pruning=True, activation="relu")
    if mode == "gelu":
        return EncoderConfig(num_layers, d, heads, head_dim, ffn, n, activation="gelu_tanh")
    if mode == "pruned":
        return EncoderConfig(2, d, heads, head_dim, ffn, max(n, 4),
                             prune_layers=(2,), keep_ratio=0.5,
                             ffn2_thresholds=(0.5, 0.5),
                             ffn2_pruning=True, activation="relu")
    raise ValueError(mode)

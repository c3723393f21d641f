"""Digitized per-layer FFN2 skip ratios for the DeiT-S preset.

The per-layer skip chart of the reference design is published only as a bar
figure, so these values are digitized estimates with roughly +/- 2
percentage points of per-layer tolerance. Three anchors are stated exactly
in the published results and hold for this table: the aggregate skip ratio
is 59.3%, layer 12 reaches 97.59%, and replaying the table on the DeiT-S
token-pruning schedule lands the combined MAC reduction at 61.5%.
"""

from __future__ import annotations

import numpy as np

from .model import EncoderConfig

# Kept FFN2 dimensions (out of 1536) per layer, 1-based layer order.
DEIT_S_FFN2_KEPT_DIMS = (762, 747, 730, 805, 797, 788, 855, 849, 840, 169, 123, 37)


def deit_s_ffn2_kept_dims() -> list[int]:
    return list(DEIT_S_FFN2_KEPT_DIMS)


def deit_s_ffn2_skip_ratios() -> list[float]:
    return [1.0 - k / 1536 for k in DEIT_S_FFN2_KEPT_DIMS]


def fixture_masks(config: EncoderConfig, kept_dims: list[int] | None = None) -> list[np.ndarray]:
    """Boolean keep masks realizing the kept-dim counts (kept dimensions
    occupy the lowest indices; only the counts matter downstream)."""
    kept = kept_dims if kept_dims is not None else deit_s_ffn2_kept_dims()
    if len(kept) != config.num_layers:
        raise ValueError(f"need {config.num_layers} kept-dim entries, got {len(kept)}")
    masks = []
    for k in kept:
        if not (0 <= k <= config.ffn_dim):
            raise ValueError(f"kept dims {k} outside [0, {config.ffn_dim}]")
        m = np.zeros(config.ffn_dim, dtype=bool)
        m[:k] = True
        masks.append(m)
    return masks

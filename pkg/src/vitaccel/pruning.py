"""Dynamic pruning: class-attention Top-K token selection and
threshold-based FFN2 dimension masking.

Token importance is the class token's softmax attention mass averaged across
heads; the class token itself is always kept and excluded from the ranking.
FFN2 dimensions are kept when their post-activation column sum strictly
exceeds the layer threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_SOFTMAX_SUM_TOL = 1e-5


class PruningError(ValueError):
    pass


@dataclass(frozen=True)
class ClassAttentionScores:
    """Per-token importance scores (class token's attention row, head-averaged,
    class position dropped). ``scores[j]`` belongs to original token j+1."""

    scores: np.ndarray
    source_layer: int

    def __post_init__(self) -> None:
        s = self.scores
        if s.ndim != 1:
            raise PruningError("scores must be a 1-D vector")
        if np.any(s < -_SOFTMAX_SUM_TOL) or np.any(s > 1.0 + _SOFTMAX_SUM_TOL):
            raise PruningError("scores must lie in [0, 1]")
        if float(s.sum()) > 1.0 + _SOFTMAX_SUM_TOL:
            raise PruningError("scores sum exceeds the softmax mass bound of 1")


@dataclass(frozen=True)
class TokenKeepSet:
    """Sorted original token indices surviving a pruning event. Index 0
    (class token) is always present; K counts the non-class survivors."""

    kept_indices: np.ndarray
    k: int

    def __post_init__(self) -> None:
        idx = self.kept_indices
        if len(idx) != self.k + 1:
            raise PruningError(f"expected K+1={self.k + 1} kept indices, got {len(idx)}")
        if idx[0] != 0:
            raise PruningError("class token (index 0) must be kept")
        if np.any(np.diff(idx) <= 0):
            raise PruningError("kept indices must be strictly increasing")


@dataclass(frozen=True)
class Ffn2KeepMask:
    """Boolean keep decision per FFN intermediate dimension, together with
    the accumulated column sums that produced it."""

    mask: np.ndarray
    accumulated: np.ndarray
    threshold: float

    @property
    def kept_dims(self) -> int:
        return int(self.mask.sum())


def class_attention(
    attn_probs_per_head: np.ndarray,
    num_heads: int | None = None,
    source_layer: int = 0,
) -> ClassAttentionScores:
    """Average the class token's softmax rows across heads.

    ``attn_probs_per_head`` is [H x N]: one softmax row per head (the class
    token's attention over all N tokens). Position 0 (self-attention of the
    class token) is dropped; output has length N-1.
    """
    probs = np.asarray(attn_probs_per_head, dtype=np.float64)
    if probs.ndim != 2:
        raise PruningError(f"expected [heads x tokens] matrix, got shape {probs.shape}")
    if num_heads is not None and probs.shape[0] != num_heads:
        raise PruningError(f"got {probs.shape[0]} head rows, config expects {num_heads}")
    if np.any(probs < -_SOFTMAX_SUM_TOL):
        raise PruningError("attention probabilities must be non-negative")
    row_sums = probs.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > _SOFTMAX_SUM_TOL):
        raise PruningError("each head row must be a softmax distribution (sum to 1)")
    scores = probs.mean(axis=0)[1:]
    return ClassAttentionScores(scores=scores, source_layer=source_layer)


def top_k_count(num_tokens: int, keep_ratio: float) -> int:
    """K = ceil((N - 1) * keep_ratio): non-class tokens surviving a prune."""
    if not (0.0 < keep_ratio <= 1.0):
        raise PruningError(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    if num_tokens < 2:
        raise PruningError(f"token pruning needs at least 2 tokens, got {num_tokens}")
    return math.ceil((num_tokens - 1) * keep_ratio)


def topk_select(scores: ClassAttentionScores, keep_ratio: float, num_tokens: int) -> TokenKeepSet:
    """Keep the class token plus the K highest-scoring tokens.

    Ties break toward the lower original index (stable, matching a sorter
    that emits earlier-arriving equal keys first). Output indices ascend.
    """
    s = scores.scores
    if len(s) != num_tokens - 1:
        raise PruningError(f"got {len(s)} scores for {num_tokens} tokens, expected {num_tokens - 1}")
    k = top_k_count(num_tokens, keep_ratio)
    # lexsort: primary key -score (descending score), secondary original order
    order = np.lexsort((np.arange(len(s)), -s))
    winners = order[:k] + 1  # shift past the class token
    kept = np.sort(np.concatenate(([0], winners)))
    return TokenKeepSet(kept_indices=kept.astype(np.int64), k=k)


def ffn2_accumulate_and_mask(post_act: np.ndarray, threshold: float) -> Ffn2KeepMask:
    """Accumulate post-activation values per dimension and compare with the
    threshold; a dimension is kept only on strict excess.

    ``post_act`` is [tokens x ffn_dim] and must be non-negative (relu output
    feeds this); negative entries signal a pipeline bug upstream.
    """
    acts = np.asarray(post_act, dtype=np.float64)
    if acts.ndim != 2:
        raise PruningError(f"expected [tokens x ffn_dim] matrix, got shape {acts.shape}")
    if threshold < 0:
        raise PruningError(f"threshold must be >= 0, got {threshold}")
    if np.any(acts < 0):
        raise PruningError("post-activation values must be non-negative (is relu applied?)")
    accumulated = acts.sum(axis=0)
    mask = accumulated > threshold
    return Ffn2KeepMask(mask=mask, accumulated=accumulated, threshold=float(threshold))

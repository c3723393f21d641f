"""Independent dequantized floating-point reference of the encoder pipeline.

Runs the same dataflow as the INT8 engine but entirely on dequantized real
values, applying quantize-dequantize at the same boundaries with its own
rounding helpers. Written separately from the engine (no shared kernels,
own top-k and masking logic) so it can serve as the golden model: any
disagreement beyond float association noise flags an integer-kernel bug.
"""

from __future__ import annotations

import math

import numpy as np

LN_EPS = 1e-6
PROB_SCALE = 1.0 / 127.0


def qdq(x, scale):
    """Fake quantization: round-half-even to the int8 grid, clamp, rescale."""
    return np.clip(np.rint(np.asarray(x, np.float64) / scale), -128, 127) * scale


def _layer_norm(x, gamma, beta):
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mean) / np.sqrt(var + LN_EPS) * np.asarray(gamma, np.float64) + np.asarray(
        beta, np.float64
    )


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def _softmax_rows(rows):
    z = rows - rows.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def topk_keep_indices(scores, keep_ratio, num_tokens):
    """Brute-force keep set: class token plus the K best scores, ties to the
    lower original index, ascending output."""
    k = math.ceil((num_tokens - 1) * keep_ratio)
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    return [0] + sorted(j + 1 for j in order[:k])


def column_mask(post_act, threshold):
    """Brute-force FFN2 keep mask: per-column sums, strict threshold."""
    sums = [sum(col) for col in np.asarray(post_act, np.float64).T]
    return np.array([s > threshold for s in sums])


def run_reference(config, layers, input_real, scales, output_scale):
    """Golden pipeline on dequantized values.

    ``layers`` are the engine's LayerWeights (weights are dequantized here);
    ``scales`` / ``output_scale`` come from the prepared model so both paths
    quantize on identical grids.
    """
    x = np.array(input_real, dtype=np.float64)
    hd = config.head_dim
    inv_sqrt = 1.0 / math.sqrt(hd)
    thresholds = config.ffn2_thresholds or (0.0,) * config.num_layers
    prev_scores = None
    token_counts = []
    masks = []

    for l in range(1, config.num_layers + 1):
        lw = layers[l - 1]
        sc = scales[l - 1]
        if l in config.prune_layers:
            keep = topk_keep_indices(prev_scores, config.keep_ratio, x.shape[0])
            x = x[keep]
        n = x.shape[0]
        token_counts.append(n)

        y = qdq(_layer_norm(x, lw.ln1_gamma, lw.ln1_beta), sc.x_attn)
        q = qdq(y @ lw.wq.dequantize(), sc.q)
        k = qdq(y @ lw.wk.dequantize(), sc.k)
        v = qdq(y @ lw.wv.dequantize(), sc.v)

        heads = np.empty((n, config.embed_dim))
        cls_rows = np.empty((config.num_heads, n))
        for h in range(config.num_heads):
            sl = slice(h * hd, (h + 1) * hd)
            probs = _softmax_rows(q[:, sl] @ k[:, sl].T * inv_sqrt)
            cls_rows[h] = probs[0]
            probs_q = qdq(probs, PROB_SCALE)
            heads[:, sl] = qdq(probs_q @ v[:, sl], sc.av)
        x = x + qdq(heads @ lw.wproj.dequantize(), sc.proj)

        y2 = qdq(_layer_norm(x, lw.ln2_gamma, lw.ln2_beta), sc.x_ffn)
        h1 = qdq(y2 @ lw.wffn1.dequantize(), sc.ffn1)
        if config.activation == "relu":
            post = np.maximum(h1, 0)
        else:
            post = qdq(_gelu(h1), sc.post_act)
        if config.ffn2_pruning:
            mask = column_mask(post, thresholds[l - 1])
            post = post * mask
        else:
            mask = np.ones(config.ffn_dim, dtype=bool)
        masks.append(mask)
        x = x + qdq(post @ lw.wffn2.dequantize(), sc.ffn2)

        prev_scores = cls_rows.mean(axis=0)[1:]

    return qdq(x, output_scale), token_counts, masks

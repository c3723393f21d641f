"""Value-level execution of the pruned encoder stack on INT8 tensors.

Per layer the pipeline is:

    layernorm -> QKV gemm -> per-head (QK^T -> softmax -> requantized probs
    x V) -> head concat -> projection -> residual add -> layernorm -> FFN1
    -> activation -> FFN2 dimension mask -> FFN2 gemm over kept dimensions
    -> residual add

GEMMs run on int8 operands with int32 accumulation and round-to-nearest-even
requantization at each boundary. Residual adds, layernorm and softmax run in
real (float64) arithmetic, so quantization effects are confined to the GEMMs.
Token pruning executes at the start of the configured layers, using the
class-attention scores captured from the previous layer, and physically
compacts the token matrix.

Activation scales are fixed at ingestion: ``prepare_model`` runs the same
pipeline in real arithmetic over a calibration input and records max-abs
ranges at every quantization point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import EncoderConfig, LayerWeights
from .pruning import (
    ClassAttentionScores,
    Ffn2KeepMask,
    class_attention,
    ffn2_accumulate_and_mask,
    topk_select,
)
from .quant import AccTensor, QuantTensor, gemm_q8, quantize, requantize

LAYERNORM_EPS = 1e-6
# Attention probabilities lie in [0, 1]; scale 1/127 maps 1.0 to full range.
PROB_SCALE = 1.0 / 127.0


class EngineError(RuntimeError):
    def __init__(self, message: str, layer: int | None = None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer


def relu(x):
    """max(0, x); works on scalars and arrays."""
    return np.maximum(x, 0)


def gelu_tanh(x):
    """Tanh-form GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))),
    evaluated in double precision."""
    x = np.asarray(x, dtype=np.float64)
    inner = math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)
    out = 0.5 * x * (1.0 + np.tanh(inner))
    return out if out.ndim else float(out)


def softmax_row(logits: np.ndarray, scale: float) -> np.ndarray:
    """Scaled, max-subtracted softmax of one row; the result sums to 1."""
    z = np.asarray(logits, dtype=np.float64) * scale
    if not np.all(np.isfinite(z)):
        raise EngineError("softmax input contains non-finite values")
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _softmax_rows(logits: np.ndarray, scale: float) -> np.ndarray:
    z = logits * scale
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = LAYERNORM_EPS) -> np.ndarray:
    """Row-wise layernorm in real precision."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * np.asarray(gamma, dtype=np.float64) + np.asarray(
        beta, dtype=np.float64
    )


@dataclass(frozen=True)
class LayerScales:
    """Quantization scales for one layer, fixed at ingestion."""

    x_attn: float  # post-layernorm attention input
    q: float
    k: float
    v: float
    av: float  # attention-weighted values
    proj: float
    x_ffn: float  # post-layernorm FFN input
    ffn1: float
    post_act: float  # post-activation (equals ffn1 for relu)
    ffn2: float


@dataclass
class PreparedModel:
    """Weights plus calibrated activation scales, ready to run."""

    config: EncoderConfig
    layers: list[LayerWeights]
    scales: list[LayerScales]
    output_scale: float


@dataclass
class LayerTrace:
    """Observable record of one layer's execution."""

    layer_index: int
    tokens_in: int
    tokens_out: int
    ffn2_kept_dims: int
    ffn2_mask: np.ndarray
    activation_sparsity: float
    class_attention: ClassAttentionScores | None = None
    kept_token_indices: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "layer_index": self.layer_index,
            "tokens_in": self.tokens_in,
            "tokens_out": self.tokens_out,
            "ffn2_kept_dims": self.ffn2_kept_dims,
            "ffn2_mask": [int(b) for b in self.ffn2_mask],
            "activation_sparsity": self.activation_sparsity,
            "class_attention": (
                None
                if self.class_attention is None
                else {
                    "scores": [float(v) for v in self.class_attention.scores],
                    "source_layer": self.class_attention.source_layer,
                }
            ),
            "kept_token_indices": (
                None if self.kept_token_indices is None else [int(i) for i in self.kept_token_indices]
            ),
        }

    @staticmethod
    def from_dict(d: dict) -> "LayerTrace":
        ca = d.get("class_attention")
        return LayerTrace(
            layer_index=int(d["layer_index"]),
            tokens_in=int(d["tokens_in"]),
            tokens_out=int(d["tokens_out"]),
            ffn2_kept_dims=int(d["ffn2_kept_dims"]),
            ffn2_mask=np.asarray(d["ffn2_mask"], dtype=bool),
            activation_sparsity=float(d["activation_sparsity"]),
            class_attention=(
                None
                if ca is None
                else ClassAttentionScores(
                    scores=np.asarray(ca["scores"], dtype=np.float64),
                    source_layer=int(ca["source_layer"]),
                )
            ),
            kept_token_indices=(
                None
                if d.get("kept_token_indices") is None
                else np.asarray(d["kept_token_indices"], dtype=np.int64)
            ),
        )


def _scale_from_maxabs(maxabs: float) -> float:
    return maxabs / 127.0 if maxabs > 0 else 1.0


class _Calibrator:
    """Tracks max-abs at each quantization point during the real-valued pass."""

    def __init__(self) -> None:
        self.maxima: dict[str, float] = {}

    def see(self, key: str, values: np.ndarray) -> float:
        m = float(np.max(np.abs(values))) if values.size else 0.0
        self.maxima[key] = max(self.maxima.get(key, 0.0), m)
        return _scale_from_maxabs(self.maxima[key])


def _check_prune_layers(config: EncoderConfig) -> None:
    if 1 in config.prune_layers:
        raise EngineError(
            "cannot prune at layer 1: class-attention scores come from the previous layer"
        )


def prepare_model(
    config: EncoderConfig, layers: list[LayerWeights], calib_tokens: QuantTensor
) -> PreparedModel:
    """Fix activation scales by running the pipeline in real arithmetic over
    a calibration input and recording max-abs at every quantization point."""
    _check_prune_layers(config)
    if len(layers) != config.num_layers:
        raise EngineError(f"model has {len(layers)} layers, config says {config.num_layers}")
    if calib_tokens.shape != (config.num_tokens, config.embed_dim):
        raise EngineError(
            f"calibration input shape {calib_tokens.shape} does not match "
            f"({config.num_tokens}, {config.embed_dim})"
        )

    cal = _Calibrator()
    thresholds = config.thresholds_or_zero()
    inv_sqrt_d = 1.0 / math.sqrt(config.head_dim)
    x = calib_tokens.dequantize()
    prev_scores: ClassAttentionScores | None = None
    scales: list[LayerScales] = []

    for l in range(1, config.num_layers + 1):
        lw = layers[l - 1]
        if l in config.prune_layers:
            keep = topk_select(prev_scores, config.keep_ratio, x.shape[0])
            x = x[keep.kept_indices]
        n = x.shape[0]

        y = layer_norm(x, lw.ln1_gamma, lw.ln1_beta)
        s_x = cal.see(f"{l}.x_attn", y)
        q = y @ lw.wq.dequantize()
        k = y @ lw.wk.dequantize()
        v = y @ lw.wv.dequantize()
        s_q = cal.see(f"{l}.q", q)
        s_k = cal.see(f"{l}.k", k)
        s_v = cal.see(f"{l}.v", v)

        hd = config.head_dim
        heads_out = np.empty((n, config.embed_dim))
        cls_rows = np.empty((config.num_heads, n))
        for h in range(config.num_heads):
            sl = slice(h * hd, (h + 1) * hd)
            logits = q[:, sl] @ k[:, sl].T
            probs = _softmax_rows(logits, inv_sqrt_d)
            cls_rows[h] = probs[0]
            heads_out[:, sl] = probs @ v[:, sl]
        s_av = cal.see(f"{l}.av", heads_out)
        proj = heads_out @ lw.wproj.dequantize()
        s_proj = cal.see(f"{l}.proj", proj)
        x = x + proj

        y2 = layer_norm(x, lw.ln2_gamma, lw.ln2_beta)
        s_x2 = cal.see(f"{l}.x_ffn", y2)
        h1 = y2 @ lw.wffn1.dequantize()
        s_h1 = cal.see(f"{l}.ffn1", h1)
        if config.activation == "relu":
            post = relu(h1)
            s_post = s_h1
        else:
            post = gelu_tanh(h1)
            s_post = cal.see(f"{l}.post_act", post)
        if config.ffn2_pruning:
            mask = ffn2_accumulate_and_mask(post, thresholds[l - 1]).mask
            post = post * mask
        f2 = post @ lw.wffn2.dequantize()
        s_f2 = cal.see(f"{l}.ffn2", f2)
        x = x + f2

        prev_scores = class_attention(cls_rows, config.num_heads, source_layer=l)
        scales.append(
            LayerScales(
                x_attn=s_x, q=s_q, k=s_k, v=s_v, av=s_av, proj=s_proj,
                x_ffn=s_x2, ffn1=s_h1, post_act=s_post, ffn2=s_f2,
            )
        )

    out_scale = _scale_from_maxabs(float(np.max(np.abs(x))))
    return PreparedModel(config=config, layers=layers, scales=scales, output_scale=out_scale)


def run_encoder(
    prepared: PreparedModel,
    input_tokens: QuantTensor,
    force_dense_ffn2: bool = False,
) -> tuple[QuantTensor, list[LayerTrace]]:
    """Run the INT8 encoder stack; returns output tokens and per-layer traces.

    ``force_dense_ffn2`` computes FFN2 over all dimensions regardless of the
    keep mask (the mask is still evaluated and recorded). This is the hook
    for skip-equivalence verification against pre-zeroed weights.
    """
    config = prepared.config
    _check_prune_layers(config)
    if input_tokens.shape != (config.num_tokens, config.embed_dim):
        raise EngineError(
            f"input shape {input_tokens.shape} does not match "
            f"({config.num_tokens}, {config.embed_dim})"
        )

    thresholds = config.thresholds_or_zero()
    inv_sqrt_d = 1.0 / math.sqrt(config.head_dim)
    hd = config.head_dim
    x = input_tokens.dequantize()
    prev_scores: ClassAttentionScores | None = None
    traces: list[LayerTrace] = []

    for l in range(1, config.num_layers + 1):
        lw = prepared.layers[l - 1]
        sc = prepared.scales[l - 1]
        tokens_in = x.shape[0]
        kept_idx = None
        if l in config.prune_layers:
            if prev_scores is None:
                raise EngineError("no class-attention scores available for pruning", layer=l)
            keep = topk_select(prev_scores, config.keep_ratio, tokens_in)
            x = x[keep.kept_indices]
            kept_idx = keep.kept_indices
        n = x.shape[0]

        # attention block
        y = layer_norm(x, lw.ln1_gamma, lw.ln1_beta)
        xq = quantize(y, sc.x_attn)
        try:
            q = requantize(gemm_q8(xq, lw.wq), sc.q)
            k = requantize(gemm_q8(xq, lw.wk), sc.k)
            v = requantize(gemm_q8(xq, lw.wv), sc.v)
        except Exception as exc:
            raise EngineError(f"QKV gemm failed: {exc}", layer=l) from exc

        a_data = np.empty((n, config.embed_dim), dtype=np.int8)
        cls_rows = np.empty((config.num_heads, n))
        for h in range(config.num_heads):
            sl = slice(h * hd, (h + 1) * hd)
            qh = QuantTensor(np.ascontiguousarray(q.data[:, sl]), q.scale)
            kh = QuantTensor(np.ascontiguousarray(k.data[:, sl]), k.scale)
            logits = gemm_q8(qh, kh.transpose())
            probs = _softmax_rows(logits.dequantize(), inv_sqrt_d)
            cls_rows[h] = probs[0]
            probs_q = quantize(probs, PROB_SCALE)
            vh = QuantTensor(np.ascontiguousarray(v.data[:, sl]), v.scale)
            a_data[:, sl] = requantize(gemm_q8(probs_q, vh), sc.av).data
        a = QuantTensor(a_data, sc.av)
        proj = requantize(gemm_q8(a, lw.wproj), sc.proj)
        x = x + proj.dequantize()

        # feed-forward block
        y2 = layer_norm(x, lw.ln2_gamma, lw.ln2_beta)
        x2q = quantize(y2, sc.x_ffn)
        try:
            h1 = requantize(gemm_q8(x2q, lw.wffn1), sc.ffn1)
        except Exception as exc:
            raise EngineError(f"FFN1 gemm failed: {exc}", layer=l) from exc
        if config.activation == "relu":
            hq = QuantTensor(np.maximum(h1.data, 0), sc.ffn1)
        else:
            hq = quantize(gelu_tanh(h1.dequantize()), sc.post_act)
        sparsity = float(np.mean(hq.data == 0))

        if config.ffn2_pruning:
            mask_info = ffn2_accumulate_and_mask(hq.dequantize(), thresholds[l - 1])
            mask = mask_info.mask
        else:
            mask = np.ones(config.ffn_dim, dtype=bool)

        if force_dense_ffn2 or bool(mask.all()):
            f2_acc = gemm_q8(hq, lw.wffn2)
        else:
            f2_acc = _ffn2_skipping_gemm(hq, lw.wffn2, mask)
        f2 = requantize(f2_acc, sc.ffn2)
        x = x + f2.dequantize()

        prev_scores = class_attention(cls_rows, config.num_heads, source_layer=l)
        traces.append(
            LayerTrace(
                layer_index=l,
                tokens_in=tokens_in,
                tokens_out=n,
                ffn2_kept_dims=int(mask.sum()),
                ffn2_mask=mask,
                activation_sparsity=sparsity,
                class_attention=prev_scores if (l + 1) in config.prune_layers else None,
                kept_token_indices=kept_idx,
            )
        )

    out = quantize(x, prepared.output_scale)
    return out, traces


def _ffn2_skipping_gemm(post_act: QuantTensor, wffn2: QuantTensor, mask: np.ndarray) -> AccTensor:
    """FFN2 over kept dimensions only; pruned weight rows are never touched.

    Summing the kept subset in integer arithmetic is bit-identical to a dense
    multiply against weights whose masked rows are zero.
    """
    n, d = post_act.shape[0], wffn2.shape[1]
    if not mask.any():
        return AccTensor(np.zeros((n, d), dtype=np.int32), post_act.scale * wffn2.scale)
    kept = np.flatnonzero(mask)
    a = QuantTensor(np.ascontiguousarray(post_act.data[:, kept]), post_act.scale)
    b = QuantTensor(np.ascontiguousarray(wffn2.data[kept, :]), wffn2.scale)
    return gemm_q8(a, b)


def token_counts_from_traces(traces: list[LayerTrace]) -> list[int]:
    """Per-layer token counts (the count each layer actually ran on)."""
    return [t.tokens_out for t in traces]


def kept_dims_from_traces(traces: list[LayerTrace]) -> list[int]:
    return [t.ffn2_kept_dims for t in traces]

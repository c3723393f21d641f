"""INT8 vision-transformer inference with dynamic token and FFN2 pruning,
plus cycle-approximate and memory-traffic models of the target accelerator."""

__version__ = "0.1.0"

from .quant import AccTensor, QuantTensor, gemm_q8, quantize, requantize
from .model import (
    EncoderConfig,
    LayerWeights,
    deit_small,
    load_model,
    preset,
    save_model,
    synth_input,
    synth_model,
)
from .pruning import (
    ClassAttentionScores,
    Ffn2KeepMask,
    TokenKeepSet,
    class_attention,
    ffn2_accumulate_and_mask,
    topk_select,
)
from .engine import (
    LayerTrace,
    PreparedModel,
    gelu_tanh,
    prepare_model,
    relu,
    run_encoder,
    softmax_row,
)
from .analytics import MacBreakdown, combined_reduction, count_macs, dense_macs, token_schedule
from .perf import CycleReport, PeConfig, cycles_av, cycles_fc, cycles_qkt, simulate, sorter_latency
from .traffic import SramConfig, TrafficReport, sram_check, total_traffic

__all__ = [
    "AccTensor",
    "ClassAttentionScores",
    "CycleReport",
    "EncoderConfig",
    "Ffn2KeepMask",
    "LayerTrace",
    "LayerWeights",
    "MacBreakdown",
    "PeConfig",
    "PreparedModel",
    "QuantTensor",
    "SramConfig",
    "TokenKeepSet",
    "TrafficReport",
    "class_attention",
    "combined_reduction",
    "count_macs",
    "cycles_av",
    "cycles_fc",
    "cycles_qkt",
    "deit_small",
    "dense_macs",
    "ffn2_accumulate_and_mask",
    "gelu_tanh",
    "gemm_q8",
    "load_model",
    "prepare_model",
    "preset",
    "quantize",
    "relu",
    "requantize",
    "run_encoder",
    "save_model",
    "simulate",
    "softmax_row",
    "sorter_latency",
    "sram_check",
    "synth_input",
    "synth_model",
    "token_schedule",
    "topk_select",
    "total_traffic",
]

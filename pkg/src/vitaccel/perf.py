"""Cycle-approximate model of the accelerator dataflow.

The datapath is 8 PE groups x 8 arrays x 8 MACs (512 MACs/cycle peak at
1 GHz, 1024 GOPS counting 2 ops per MAC). Three mappings are charged:

* Fully connected ([N x D] @ [D x M]): 8 token rows in parallel, 64 inner
  elements accumulated per cycle, 8 outputs emitted per accumulation pass:
  ``ceil(N/8) * ceil(D/64) * M`` cycles. Row padding models the utilization
  loss when N is not a multiple of 8.
* QK^T per head: the 64-wide shared dimension maps across all groups in one
  cycle, so 8 score elements complete per cycle: ``ceil(N*N/8)``.
* Attention x V per head: the FC formula with inner dimension N and 64
  output columns.

The FFN runs interleaved: FFN1 produces post-activation columns in octets of
8; kept dimensions are packed into groups of 8 (the pruning module's index
buffer releases weight fetches 8 kept indices at a time) and each pack's
partial FFN2 product is charged ``ceil(N/8) * ceil(d/8)`` cycles with the 8
output columns spread across the PE groups. A fully pruned octet therefore
contributes no FFN2 cycles, and an all-true mask costs exactly the dense FC
schedule. The temp buffer holds one octet in flight: N x 8 bytes.

The token-pruning sorter emits one index per cycle after a buffer-fill setup
phase (``ceil(N/8)`` by default): ``setup + K`` cycles. The FFN2 comparator
overlaps FFN1 compute and is charged zero cycles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analytics import MAC_KINDS, OPS_PER_MAC
from .engine import LayerTrace
from .model import EncoderConfig

OCTET = 8  # post-activation columns produced, and kept rows packed, per step


class PerfError(ValueError):
    pass


@dataclass(frozen=True)
class PeConfig:
    """PE array geometry and clocking.

    The default preset satisfies num_groups * arrays_per_group *
    macs_per_array = 512 and arrays_per_group * num_groups = 64 (the
    accumulation-count x group-parallelism constraint).
    """

    num_groups: int = 8
    arrays_per_group: int = 8
    macs_per_array: int = 8
    clock_hz: float = 1e9
    softmax_cycles_per_row: int = 0
    sorter_setup_cycles: int | None = None  # None: ceil(tokens / rows_per_block)

    def __post_init__(self) -> None:
        for name in ("num_groups", "arrays_per_group", "macs_per_array"):
            if getattr(self, name) < 1:
                raise PerfError(f"{name} must be >= 1")
        if self.clock_hz <= 0:
            raise PerfError("clock_hz must be positive")
        if self.softmax_cycles_per_row < 0:
            raise PerfError("softmax_cycles_per_row must be >= 0")

    @property
    def rows_per_block(self) -> int:
        return self.macs_per_array

    @property
    def accum_span(self) -> int:
        return self.num_groups * self.arrays_per_group

    @property
    def peak_macs(self) -> int:
        return self.num_groups * self.arrays_per_group * self.macs_per_array

    @property
    def peak_gops(self) -> float:
        return self.peak_macs * OPS_PER_MAC * self.clock_hz / 1e9

    def to_dict(self) -> dict:
        return {
            "num_groups": self.num_groups,
            "arrays_per_group": self.arrays_per_group,
            "macs_per_array": self.macs_per_array,
            "clock_hz": self.clock_hz,
            "softmax_cycles_per_row": self.softmax_cycles_per_row,
            "sorter_setup_cycles": self.sorter_setup_cycles,
        }

    @staticmethod
    def from_dict(d: dict) -> "PeConfig":
        return PeConfig(
            num_groups=int(d.get("num_groups", 8)),
            arrays_per_group=int(d.get("arrays_per_group", 8)),
            macs_per_array=int(d.get("macs_per_array", 8)),
            clock_hz=float(d.get("clock_hz", 1e9)),
            softmax_cycles_per_row=int(d.get("softmax_cycles_per_row", 0)),
            sorter_setup_cycles=(
                None if d.get("sorter_setup_cycles") is None else int(d["sorter_setup_cycles"])
            ),
        )


DEFAULT_PE = PeConfig()


def cycles_fc(rows: int, inner: int, outer: int, pe: PeConfig = DEFAULT_PE) -> int:
    """Fully connected mapping: ceil(N/8) * ceil(D/64) * M in the default
    geometry. 8 output elements complete every ceil(D/64) accumulation
    cycles; partial row blocks are padded."""
    if rows < 1 or inner < 1 or outer < 1:
        raise PerfError(f"cycles_fc dims must be >= 1, got ({rows}, {inner}, {outer})")
    return math.ceil(rows / pe.rows_per_block) * math.ceil(inner / pe.accum_span) * outer


def cycles_qkt(tokens: int, head_dim: int = 64, pe: PeConfig = DEFAULT_PE) -> int:
    """QK^T per head: 8 score elements per cycle, requiring the head
    dimension to equal the 64-wide accumulation span."""
    if tokens < 1:
        raise PerfError(f"cycles_qkt needs tokens >= 1, got {tokens}")
    if head_dim != pe.accum_span:
        raise PerfError(
            f"QK^T mapping requires head_dim == {pe.accum_span} (got {head_dim})"
        )
    outputs_per_cycle = pe.peak_macs // head_dim
    return math.ceil(tokens * tokens / outputs_per_cycle)


def cycles_av(tokens: int, head_dim: int = 64, pe: PeConfig = DEFAULT_PE) -> int:
    """Attention x V per head: row-wise FC with inner dimension N."""
    return cycles_fc(tokens, tokens, head_dim, pe)


@dataclass(frozen=True)
class FfnSchedule:
    ffn1_cycles: int
    ffn2_cycles: int
    packs: int
    temp_highwater_bytes: int

    @property
    def cycles(self) -> int:
        return self.ffn1_cycles + self.ffn2_cycles


def schedule_ffn_interleaved(
    tokens: int,
    embed_dim: int,
    ffn_dim: int,
    keep_mask: np.ndarray,
    pe: PeConfig = DEFAULT_PE,
) -> FfnSchedule:
    """Interleaved FFN1/FFN2 schedule with FFN2 row skipping.

    FFN1 charges the plain FC mapping octet by octet. Kept FFN2 rows are
    packed into groups of 8 and each pack is charged one accumulation step
    (ceil(pack/64) = 1) across ceil(d/8) output-column groups. With every
    dimension kept this equals the dense FC schedule for both matrices; with
    everything pruned FFN2 costs nothing.
    """
    mask = np.asarray(keep_mask, dtype=bool)
    if mask.shape != (ffn_dim,):
        raise PerfError(f"keep mask has shape {mask.shape}, expected ({ffn_dim},)")
    if tokens < 1:
        raise PerfError(f"tokens must be >= 1, got {tokens}")
    ffn1 = cycles_fc(tokens, embed_dim, ffn_dim, pe)
    kept_total = int(mask.sum())
    packs = math.ceil(kept_total / OCTET)
    row_blocks = math.ceil(tokens / pe.rows_per_block)
    col_groups = math.ceil(embed_dim / pe.num_groups)
    ffn2 = packs * row_blocks * col_groups
    temp = tokens * OCTET  # one octet of int8 post-activation in flight
    return FfnSchedule(ffn1_cycles=ffn1, ffn2_cycles=ffn2, packs=packs, temp_highwater_bytes=temp)


def sorter_latency(tokens: int, k: int, pe: PeConfig = DEFAULT_PE) -> int:
    """Top-K sorter: one index per cycle after the setup phase."""
    if not (1 <= k <= tokens - 1):
        raise PerfError(f"sorter needs 1 <= K <= N-1, got K={k}, N={tokens}")
    setup = (
        pe.sorter_setup_cycles
        if pe.sorter_setup_cycles is not None
        else math.ceil(tokens / pe.rows_per_block)
    )
    return setup + k


@dataclass(frozen=True)
class OpRecord:
    kind: str
    layer: int
    head: int | None
    cycles: int
    macs: int
    # Useful MACs per cycle in the op's interior (full row blocks, full
    # accumulation spans); 512 for well-shaped FC phases on the default PE.
    peak_issue: int = 0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "layer": self.layer, "head": self.head,
                "cycles": self.cycles, "macs": self.macs, "peak_issue": self.peak_issue}


@dataclass
class CycleReport:
    """Per-op cycle/MAC records plus totals and utilization."""

    records: list[OpRecord]
    pe: PeConfig
    total_cycles: int = field(init=False)
    total_macs: int = field(init=False)
    utilization: float = field(init=False)
    sorter_cycles: int = field(init=False)
    ffn2_module_cycles: int = 0  # comparator overlaps FFN1 compute
    peak_macs_per_cycle: int = field(init=False)

    def __post_init__(self) -> None:
        self.total_cycles = sum(r.cycles for r in self.records)
        self.total_macs = sum(r.macs for r in self.records)
        self.sorter_cycles = sum(r.cycles for r in self.records if r.kind == "sorter")
        if self.total_cycles <= 0:
            raise PerfError("schedule produced zero total cycles")
        self.utilization = self.total_macs / (self.pe.peak_macs * self.total_cycles)
        if not (0.0 < self.utilization <= 1.0):
            raise PerfError(f"utilization {self.utilization} outside (0, 1]")
        self.peak_macs_per_cycle = max((r.peak_issue for r in self.records), default=0)

    def per_layer_cycles(self) -> dict[int, dict[str, int]]:
        layers: dict[int, dict[str, int]] = {}
        for r in self.records:
            row = layers.setdefault(r.layer, {k: 0 for k in (*MAC_KINDS, "softmax", "sorter")})
            row[r.kind] = row.get(r.kind, 0) + r.cycles
        return layers

    def runtime_s(self) -> float:
        return self.total_cycles / self.pe.clock_hz

    def to_dict(self) -> dict:
        return {
            "pe": self.pe.to_dict(),
            "total_cycles": self.total_cycles,
            "total_macs": self.total_macs,
            "utilization": self.utilization,
            "sorter_cycles": self.sorter_cycles,
            "ffn2_module_cycles": self.ffn2_module_cycles,
            "peak_macs_per_cycle": self.peak_macs_per_cycle,
            "peak_gops": self.pe.peak_gops,
            "runtime_s": self.runtime_s(),
            "per_layer": {str(k): v for k, v in self.per_layer_cycles().items()},
            "records": [r.to_dict() for r in self.records],
        }


def _fc_issue(rows: int, inner: int, pe: PeConfig) -> int:
    return min(rows, pe.rows_per_block) * min(inner, pe.accum_span)


def simulate(
    config: EncoderConfig,
    traces: list[LayerTrace],
    pe: PeConfig = DEFAULT_PE,
) -> CycleReport:
    """Schedule a traced run on the PE model.

    Per layer: QKV (3 FC) + per head (QK^T + softmax + attention x V) +
    projection FC + interleaved FFN, plus the sorter at prune layers.
    """
    if len(traces) != config.num_layers:
        raise PerfError(f"trace has {len(traces)} layers, config says {config.num_layers}")
    d, f, hd = config.embed_dim, config.ffn_dim, config.head_dim
    records: list[OpRecord] = []

    for t in traces:
        n = t.tokens_out
        if n < 1 or t.tokens_in < 1:
            raise PerfError(f"layer {t.layer_index}: degenerate token count {n}")
        l = t.layer_index

        if l in config.prune_layers:
            k = n - 1
            records.append(
                OpRecord("sorter", l, None, sorter_latency(t.tokens_in, k, pe), 0)
            )

        fc_qkv = cycles_fc(n, d, d, pe)
        records.append(OpRecord("qkv", l, None, 3 * fc_qkv, 3 * n * d * d, _fc_issue(n, d, pe)))
        qkt_issue = min(n * n, pe.peak_macs // hd) * hd
        for h in range(config.num_heads):
            records.append(OpRecord("qkt", l, h, cycles_qkt(n, hd, pe), n * n * hd, qkt_issue))
            if pe.softmax_cycles_per_row > 0:
                records.append(OpRecord("softmax", l, h, pe.softmax_cycles_per_row * n, 0))
            records.append(OpRecord("av", l, h, cycles_av(n, hd, pe), n * n * hd, _fc_issue(n, n, pe)))
        records.append(OpRecord("proj", l, None, cycles_fc(n, d, d, pe), n * d * d, _fc_issue(n, d, pe)))

        mask = t.ffn2_mask if t.ffn2_mask is not None else np.ones(f, dtype=bool)
        sched = schedule_ffn_interleaved(n, d, f, mask, pe)
        records.append(OpRecord("ffn1", l, None, sched.ffn1_cycles, n * d * f, _fc_issue(n, d, pe)))
        kept = int(mask.sum())
        if sched.ffn2_cycles > 0:
            ffn2_issue = min(n, pe.rows_per_block) * min(kept, OCTET) * min(d, pe.num_groups)
            records.append(OpRecord("ffn2", l, None, sched.ffn2_cycles, n * kept * d, ffn2_issue))

    return CycleReport(records=records, pe=pe)

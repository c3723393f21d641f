"""Report writers: canonical JSON, per-layer CSV, and the matching figures.

Every report stem produces up to three files: ``<stem>.json`` (full data),
``<stem>.csv`` (per-layer breakdown, the re-plotting interface) and
``<stem>.png`` (rendered chart). JSON and CSV are byte-deterministic for a
fixed config and seed.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import __version__
from .analytics import MAC_KINDS, MacBreakdown
from .perf import CycleReport
from .traffic import TrafficReport

OUTPUT_DIR_ENV = "VITACCEL_OUTPUT_DIR"


def resolve_output_path(path: str) -> str:
    """Apply the output-directory environment override to relative paths."""
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not os.path.isabs(path):
        os.makedirs(base, exist_ok=True)
        return os.path.join(base, path)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


def write_json(path: str, payload: dict) -> str:
    path = resolve_output_path(path)
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def write_csv(path: str, header: list[str], rows: list[list]) -> str:
    path = resolve_output_path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _save(fig, path: str) -> str:
    path = resolve_output_path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def mac_csv_rows(breakdown: MacBreakdown) -> tuple[list[str], list[list]]:
    header = ["layer", "tokens", "ffn2_kept_dims", *MAC_KINDS, "total"]
    rows = [
        [lm.layer_index, lm.tokens, lm.ffn2_kept_dims,
         *[getattr(lm, k) for k in MAC_KINDS], lm.total]
        for lm in breakdown.per_layer
    ]
    return header, rows


def fig_macs(stems: dict[str, MacBreakdown], path: str) -> str:
    """Stacked per-layer MAC bars, one subplot per named breakdown."""
    names = list(stems)
    fig, axes = plt.subplots(1, len(names), figsize=(5.5 * len(names), 3.6), sharey=True)
    if len(names) == 1:
        axes = [axes]
    for ax, name in zip(axes, names):
        bd = stems[name]
        layers = [lm.layer_index for lm in bd.per_layer]
        bottom = np.zeros(len(layers))
        for kind in MAC_KINDS:
            vals = np.array([getattr(lm, kind) for lm in bd.per_layer], dtype=float) / 1e6
            ax.bar(layers, vals, bottom=bottom, label=kind)
            bottom += vals
        ax.set_title(f"{name}: {bd.grand_total / 1e9:.2f} G MACs")
        ax.set_xlabel("layer")
        ax.set_ylabel("MACs (millions)")
    axes[0].legend(fontsize=8)
    return _save(fig, path)


def traffic_csv_rows(report: TrafficReport) -> tuple[list[str], list[list]]:
    header = ["layer", "tokens", "token_bytes_baseline", "token_bytes_pruned",
              "ffn2_kept_dims", "ffn2_bytes_baseline", "ffn2_bytes_pruned", "ffn2_skip_ratio"]
    rows = [
        [r["layer"], r["tokens"], r["token_bytes_baseline"], r["token_bytes_pruned"],
         r["ffn2_kept_dims"], r["ffn2_bytes_baseline"], r["ffn2_bytes_pruned"],
         f"{r['ffn2_skip_ratio']:.6f}"]
        for r in report.per_layer_rows()
    ]
    return header, rows


def fig_traffic(report: TrafficReport, path: str) -> str:
    """Baseline vs pruned fetch bytes by stream, plus per-layer skip ratios."""
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 3.6))
    streams = ["token", "ffn2 weights", "other weights", "total"]
    baseline = [report.token_bytes_baseline, report.ffn2_weight_bytes_baseline,
                report.other_weight_bytes, report.total_bytes_baseline]
    pruned = [report.token_bytes_pruned, report.ffn2_weight_bytes_pruned,
              report.other_weight_bytes, report.total_bytes_pruned]
    x = np.arange(len(streams))
    ax0.bar(x - 0.2, np.array(baseline) / 1024, width=0.4, label="baseline")
    ax0.bar(x + 0.2, np.array(pruned) / 1024, width=0.4, label="pruned")
    ax0.set_xticks(x, streams, fontsize=8)
    ax0.set_ylabel("KB fetched")
    ax0.set_title(
        f"external fetches: token -{report.token_reduction_pct:.1f}%, "
        f"ffn2 -{report.ffn2_reduction_pct:.1f}%, total -{report.total_reduction_pct:.1f}%",
        fontsize=9,
    )
    ax0.legend(fontsize=8)

    rows = report.per_layer_rows()
    ax1.bar([r["layer"] for r in rows], [100 * r["ffn2_skip_ratio"] for r in rows])
    ax1.set_xlabel("layer")
    ax1.set_ylabel("FFN2 weight skip (%)")
    ax1.set_ylim(0, 100)
    ax1.set_title("FFN2 weight skip ratio per layer", fontsize=9)
    return _save(fig, path)


def cycles_csv_rows(report: CycleReport) -> tuple[list[str], list[list]]:
    kinds = [*MAC_KINDS, "softmax", "sorter"]
    header = ["layer", *kinds, "total"]
    rows = []
    for layer, by_kind in sorted(report.per_layer_cycles().items()):
        vals = [by_kind.get(k, 0) for k in kinds]
        rows.append([layer, *vals, sum(vals)])
    return header, rows


def fig_cycles(report: CycleReport, path: str) -> str:
    kinds = [*MAC_KINDS, "softmax", "sorter"]
    per_layer = sorted(report.per_layer_cycles().items())
    layers = [l for l, _ in per_layer]
    fig, ax = plt.subplots(figsize=(6.5, 3.6))
    bottom = np.zeros(len(layers))
    for kind in kinds:
        vals = np.array([by.get(kind, 0) for _, by in per_layer], dtype=float) / 1e3
        if vals.any():
            ax.bar(layers, vals, bottom=bottom, label=kind)
        bottom += vals
    ax.set_xlabel("layer")
    ax.set_ylabel("cycles (thousands)")
    ax.set_title(
        f"total {report.total_cycles} cycles, utilization {report.utilization:.3f}, "
        f"peak {report.peak_macs_per_cycle} MACs/cycle",
        fontsize=9,
    )
    ax.legend(fontsize=8)
    return _save(fig, path)


def compare_csv_rows(table: dict) -> tuple[list[str], list[list]]:
    keys: list[str] = ["name"]
    for row in table["rows"]:
        for key in row:
            if key not in keys:
                keys.append(key)
    rows = [[row.get(k, "") for k in keys] for row in table["rows"]]
    return keys, rows


def fig_compare(table: dict, path: str) -> str:
    rows = table["rows"]
    names = [r["name"] for r in rows]
    macs = [r.get("macs_total") or 0 for r in rows]
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.bar(names, np.array(macs, dtype=float) / 1e9)
    for i, row in enumerate(rows):
        delta = row.get("macs_delta_pct")
        if delta:
            ax.text(i, macs[i] / 1e9, f"-{delta:.1f}%", ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("MACs (G)")
    ax.set_title("run comparison", fontsize=9)
    return _save(fig, path)


def provenance(config_hash: str) -> dict:
    return {"tool_version": __version__, "config_hash": config_hash}

"""Closed-form MAC counting and baseline-vs-pruned comparisons.

Counts cover the six encoder GEMM families only (qkv, qk^t, attention x V,
projection, ffn1, ffn2); softmax, layernorm, residual adds and the pruning
modules contribute no MACs. GOPS figures use 2 ops per MAC.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import ConfigError, EncoderConfig
from .pruning import top_k_count

MAC_KINDS = ("qkv", "qkt", "av", "proj", "ffn1", "ffn2")
OPS_PER_MAC = 2


class AnalyticsError(ValueError):
    pass


@dataclass(frozen=True)
class LayerMacs:
    layer_index: int
    tokens: int
    ffn2_kept_dims: int
    qkv: int
    qkt: int
    av: int
    proj: int
    ffn1: int
    ffn2: int

    @property
    def total(self) -> int:
        return self.qkv + self.qkt + self.av + self.proj + self.ffn1 + self.ffn2

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("layer_index", "tokens", "ffn2_kept_dims", *MAC_KINDS)}
        d["total"] = self.total
        return d


@dataclass
class MacBreakdown:
    """Per-layer and total MAC counts, split by GEMM family."""

    per_layer: list[LayerMacs]
    totals: dict[str, int] = field(init=False)
    grand_total: int = field(init=False)

    def __post_init__(self) -> None:
        self.totals = {k: sum(getattr(lm, k) for lm in self.per_layer) for k in MAC_KINDS}
        self.grand_total = sum(self.totals.values())

    def reduction_vs(self, baseline: "MacBreakdown") -> float:
        if baseline.grand_total <= 0:
            raise AnalyticsError("baseline MAC total must be positive")
        return 1.0 - self.grand_total / baseline.grand_total

    def to_dict(self) -> dict:
        return {
            "per_layer": [lm.to_dict() for lm in self.per_layer],
            "totals": dict(self.totals),
            "grand_total": self.grand_total,
        }


def token_schedule(config: EncoderConfig) -> list[int]:
    """Per-layer token counts implied by the pruning schedule (data
    independent: K = ceil((N-1) * keep_ratio) at each prune layer)."""
    counts = []
    n = config.num_tokens
    for layer in range(1, config.num_layers + 1):
        if layer in config.prune_layers:
            n = top_k_count(n, config.keep_ratio) + 1
        counts.append(n)
    return counts


def count_macs(
    config: EncoderConfig,
    token_counts: list[int] | None = None,
    ffn2_kept_dims: list[int] | None = None,
) -> MacBreakdown:
    """MACs per layer for the given token counts and kept FFN2 dimensions.

    Defaults: dense token counts (num_tokens everywhere) and full ffn_dim.
    Per layer with N tokens: qkv = 3 N d^2, qk^t = N^2 d, av = N^2 d,
    proj = N d^2, ffn1 = N d ffn_dim, ffn2 = N kept d.
    """
    d, f = config.embed_dim, config.ffn_dim
    counts = list(token_counts) if token_counts is not None else [config.num_tokens] * config.num_layers
    kept = list(ffn2_kept_dims) if ffn2_kept_dims is not None else [f] * config.num_layers
    if len(counts) != config.num_layers:
        raise AnalyticsError(f"need {config.num_layers} token counts, got {len(counts)}")
    if len(kept) != config.num_layers:
        raise AnalyticsError(f"need {config.num_layers} kept-dim counts, got {len(kept)}")
    for i, (n, kd) in enumerate(zip(counts, kept), start=1):
        if n < 1:
            raise AnalyticsError(f"layer {i}: token count must be >= 1, got {n}")
        if not (0 <= kd <= f):
            raise AnalyticsError(f"layer {i}: kept dims {kd} outside [0, {f}]")
    per_layer = [
        LayerMacs(
            layer_index=i,
            tokens=n,
            ffn2_kept_dims=kd,
            qkv=3 * n * d * d,
            qkt=n * n * d,
            av=n * n * d,
            proj=n * d * d,
            ffn1=n * d * f,
            ffn2=n * kd * d,
        )
        for i, (n, kd) in enumerate(zip(counts, kept), start=1)
    ]
    return MacBreakdown(per_layer=per_layer)


def dense_macs(config: EncoderConfig) -> MacBreakdown:
    return count_macs(config)


def closed_form_layer_macs(config: EncoderConfig, tokens: int) -> int:
    """Dense per-layer MACs as a polynomial in the token count:
    (4 d^2 + 2 d ffn_dim) N + 2 d N^2."""
    d, f = config.embed_dim, config.ffn_dim
    return (4 * d * d + 2 * d * f) * tokens + 2 * d * tokens * tokens


def combined_reduction(
    config: EncoderConfig,
    ffn2_kept_dims: list[int],
    token_counts: list[int] | None = None,
) -> float:
    """Reduction from token pruning plus FFN2 dimension pruning combined:
    1 - pruned_total / dense_total."""
    counts = token_counts if token_counts is not None else token_schedule(config)
    pruned = count_macs(config, counts, ffn2_kept_dims)
    return pruned.reduction_vs(dense_macs(config))


def consistency_check(config: EncoderConfig, breakdown: MacBreakdown) -> list[str]:
    """Internal cross-checks; returns a list of failure descriptions."""
    failures = []
    if breakdown.grand_total != sum(lm.total for lm in breakdown.per_layer):
        failures.append("grand total != sum of per-layer totals")
    for lm in breakdown.per_layer:
        dense_kept = lm.ffn2_kept_dims == config.ffn_dim
        if dense_kept and lm.total != closed_form_layer_macs(config, lm.tokens):
            failures.append(
                f"layer {lm.layer_index}: component sum {lm.total} != closed form "
                f"{closed_form_layer_macs(config, lm.tokens)}"
            )
    return failures


def compare_runs(reports: list[dict], force: bool = False) -> dict:
    """Align named run reports into one comparison table.

    Each report dict must carry ``name``, ``config`` (encoder dict) and any
    of ``macs``, ``cycles``, ``traffic`` sections. Reports with differing
    model dimensions are rejected; mixed tool versions are rejected unless
    ``force`` is set.
    """
    if not reports:
        raise AnalyticsError("compare needs at least one run report")
    dims = []
    versions = set()
    for rep in reports:
        cfg = rep.get("config")
        if cfg is None:
            raise AnalyticsError(f"run {rep.get('name', '?')!r} has no embedded config")
        dims.append((cfg.get("embed_dim"), cfg.get("num_layers"), cfg.get("ffn_dim"),
                     cfg.get("num_heads"), cfg.get("num_tokens")))
        versions.add(rep.get("tool_version", "unknown"))
    if len(set(dims)) > 1:
        raise AnalyticsError(f"runs have mismatched model dimensions: {sorted(set(dims))}")
    if len(versions) > 1 and not force:
        raise AnalyticsError(
            f"runs come from mixed tool versions {sorted(versions)}; pass force to override"
        )

    rows = []
    for rep in reports:
        row: dict = {"name": rep.get("name", "run")}
        macs = rep.get("macs")
        if macs:
            row["macs_total"] = macs.get("grand_total")
        cycles = rep.get("cycles")
        if cycles:
            row["cycles_total"] = cycles.get("total_cycles")
            row["utilization"] = cycles.get("utilization")
        traffic = rep.get("traffic")
        if traffic:
            row["fetch_bytes_total"] = traffic.get("total_bytes_pruned")
            row["fetch_reduction_pct"] = traffic.get("total_reduction_pct")
        rows.append(row)

    baseline = next((r for r in rows if r.get("macs_total")), None)
    if baseline is not None and len(rows) > 1:
        for row in rows:
            mt = row.get("macs_total")
            if mt and baseline["macs_total"]:
                row["macs_delta_pct"] = 100.0 * (1.0 - mt / baseline["macs_total"])
    return {"rows": rows, "tool_versions": sorted(versions)}


def validate_config_dims(a: dict, b: dict) -> None:
    keys = ("embed_dim", "num_layers", "ffn_dim", "num_heads", "num_tokens")
    da, db = tuple(a.get(k) for k in keys), tuple(b.get(k) for k in keys)
    if da != db:
        raise ConfigError(f"model dimensions differ: {da} vs {db}")

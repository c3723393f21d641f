"""Command-line front end.

Subcommands: synth, run, simulate, traffic, analyze, compare. Validation
problems exit 1, I/O problems exit 2. Reports embed the tool version and the
resolved config hash; outputs are byte-identical for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys

import numpy as np

from . import __version__
from .analytics import (
    AnalyticsError,
    combined_reduction,
    compare_runs,
    consistency_check,
    count_macs,
    dense_macs,
    token_schedule,
)
from .engine import EngineError, LayerTrace, prepare_model, run_encoder
from .fixtures import deit_s_ffn2_kept_dims, fixture_masks
from .model import (
    ConfigError,
    ContainerError,
    EncoderConfig,
    load_model,
    preset,
    save_model,
    synth_input,
    synth_model,
)
from .perf import PeConfig, PerfError, simulate
from .pruning import PruningError
from .quant import QuantError, QuantTensor
from .reporting import (
    compare_csv_rows,
    cycles_csv_rows,
    fig_compare,
    fig_cycles,
    fig_macs,
    fig_traffic,
    mac_csv_rows,
    provenance,
    resolve_output_path,
    traffic_csv_rows,
    write_csv,
    write_json,
)
from .runconfig import RunConfig, default_run_config, load_run_config
from .traffic import SramConfig, TrafficError, sram_check, total_traffic

_VALIDATION_ERRORS = (
    ConfigError,
    ContainerError,
    QuantError,
    PruningError,
    EngineError,
    PerfError,
    TrafficError,
    AnalyticsError,
    ValueError,
)


class _Parser(argparse.ArgumentParser):
    # Usage problems are validation failures: exit 1, not argparse's 2.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _resolve_run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        if getattr(args, "preset", None):
            raise ConfigError("--preset and --config are mutually exclusive; put the preset in the file")
        rc = load_run_config(args.config)
    else:
        rc = default_run_config(getattr(args, "preset", None) or "deit-s")
    if getattr(args, "seed", None) is not None:
        rc.seed = args.seed
    if getattr(args, "fetch_events", None) is not None:
        rc.fetch_events = args.fetch_events
    return rc


def _fixture_kept_dims(enc: EncoderConfig, choice: str | None) -> list[int] | None:
    """Resolve the --ffn2 flag: None means auto (use the built-in digitized
    fixture when the geometry fits), 'fixture' demands it, 'none' disables."""
    fits = enc.num_layers == 12 and enc.ffn_dim == 1536
    if choice == "none":
        return None
    if choice == "fixture" and not fits:
        raise ConfigError("the built-in ffn2 fixture only fits the deit-s geometry")
    return deit_s_ffn2_kept_dims() if fits else None


def _load_trace(path: str) -> tuple[dict, EncoderConfig, list[LayerTrace]]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("kind") != "trace":
        raise ConfigError(f"{path} is not a trace file (kind={doc.get('kind')!r})")
    enc = EncoderConfig.from_dict(doc["config"]["encoder"])
    traces = [LayerTrace.from_dict(d) for d in doc["layers"]]
    return doc, enc, traces


def _emit(report: dict, stem: str | None, csv_payload, figure_fn) -> None:
    if stem is None:
        return
    write_json(f"{stem}.json", report)
    header, rows = csv_payload
    write_csv(f"{stem}.csv", header, rows)
    if figure_fn is not None:
        figure_fn(f"{stem}.png")


# ---------------------------------------------------------------- synth


def _cmd_synth(args) -> int:
    rc = _resolve_run_config(args)
    config = rc.encoder
    if config is None:
        raise ConfigError("synth needs a preset or explicit model dims, not a container")
    layers = synth_model(config, rc.seed)
    extras = {}
    if args.include_input:
        extras["input"] = synth_input(config, rc.seed)
    out = resolve_output_path(args.out)
    save_model(out, config, layers, extras)
    print(f"wrote {out}: {config.num_layers} layers, {config.param_count():,} weights, seed {rc.seed}")
    return 0


# ------------------------------------------------------------------ run


def _resolve_model_and_input(args, rc: RunConfig):
    container = getattr(args, "model", None) or rc.container_path
    if container:
        loaded_cfg, layers, extras = load_model(container)
        if rc.encoder is None:
            rc.bind_encoder(loaded_cfg)
        else:
            raise ConfigError(
                "--model conflicts with a preset-based config; use [model] container in the file"
            )
        config = rc.encoder
        if args.input:
            _cfg, _layers, in_extras = load_model(args.input)
            if "input" not in in_extras:
                raise ConfigError(f"{args.input} has no tensor named 'input'")
            tokens = in_extras["input"]
        elif "input" in extras:
            tokens = extras["input"]
        else:
            raise ConfigError("no input tokens: pass --input or embed an 'input' tensor")
    elif args.synth:
        if rc.encoder is None:
            raise ConfigError("--synth needs a preset or explicit dims in the config")
        config = rc.encoder
        layers = synth_model(config, rc.seed)
        tokens = synth_input(config, rc.seed)
    else:
        raise ConfigError("model required: pass --model <container> or --synth")
    if not isinstance(tokens, QuantTensor):
        raise ConfigError("'input' tensor must be int8")
    return config, layers, tokens


def _cmd_run(args) -> int:
    rc = _resolve_run_config(args)
    config, layers, tokens = _resolve_model_and_input(args, rc)
    prepared = prepare_model(config, layers, tokens)
    out, traces = run_encoder(prepared, tokens)

    trace_path = args.trace_out or rc.trace_out
    doc = {
        "kind": "trace",
        **provenance(rc.config_hash()),
        "config": rc.resolved_dict(),
        "layers": [t.to_dict() for t in traces],
        "output_scale": out.scale,
        "output_digest": hashlib.sha256(out.data.tobytes()).hexdigest(),
    }
    if trace_path:
        path = write_json(trace_path, doc)
        print(f"wrote {path}")
    final = traces[-1]
    print(
        f"ran {config.num_layers} layers: tokens {config.num_tokens} -> {final.tokens_out}, "
        f"ffn2 kept dims last layer {final.ffn2_kept_dims}/{config.ffn_dim}"
    )
    return 0


# ------------------------------------------------------------- simulate


def _cmd_simulate(args) -> int:
    if not args.trace:
        print("error: trace required (run `vitaccel run --trace-out ...` first)", file=sys.stderr)
        return 1
    doc, enc, traces = _load_trace(args.trace)
    pe = PeConfig.from_dict(doc["config"].get("pe", {}))
    if args.config:
        rc = load_run_config(args.config)
        pe = rc.pe
    report = simulate(enc, traces, pe)
    payload = {
        "kind": "cycles",
        "name": args.name,
        "tool_version": doc.get("tool_version", __version__),
        "config_hash": doc.get("config_hash"),
        "config": enc.to_dict(),
        "cycles": report.to_dict(),
    }
    _emit(payload, args.report, cycles_csv_rows(report),
          None if args.no_figures else (lambda p: fig_cycles(report, p)))
    print(
        f"{report.total_cycles:,} cycles, {report.total_macs:,} MACs, "
        f"utilization {report.utilization:.3f}, peak {report.peak_macs_per_cycle} MACs/cycle, "
        f"{report.runtime_s() * 1e6:.1f} us at {pe.clock_hz / 1e9:g} GHz"
    )
    return 0


# -------------------------------------------------------------- traffic


def _cmd_traffic(args) -> int:
    if args.trace:
        doc, enc, traces = _load_trace(args.trace)
        counts = [t.tokens_out for t in traces]
        kept = [t.ffn2_kept_dims for t in traces]
        masks = [t.ffn2_mask for t in traces]
        fetch_events = args.fetch_events or doc["config"].get("fetch_events", 1)
        sram = SramConfig.from_dict(doc["config"].get("sram", {}))
        chash = doc.get("config_hash")
    else:
        rc = _resolve_run_config(args)
        if rc.encoder is None:
            raise ConfigError("traffic without a trace needs a preset or explicit dims")
        enc = rc.encoder
        counts = token_schedule(enc)
        kept = _fixture_kept_dims(enc, args.ffn2)
        if kept is not None:
            masks = fixture_masks(enc, kept)
        else:
            kept = [enc.ffn_dim] * enc.num_layers
            masks = None
        fetch_events = args.fetch_events or rc.fetch_events
        sram = rc.sram
        chash = rc.config_hash()

    report = total_traffic(enc, counts, kept, fetch_events)
    check = sram_check(sram, enc, counts, masks)
    payload = {
        "kind": "traffic",
        "name": args.name,
        **provenance(chash),
        "config": enc.to_dict(),
        "traffic": report.to_dict(),
        "sram_check": check.to_dict(),
    }
    _emit(payload, args.report, traffic_csv_rows(report),
          None if args.no_figures else (lambda p: fig_traffic(report, p)))
    print(
        f"token fetch reduction {report.token_reduction_pct:.1f}% "
        f"(reference reports {payload['traffic']['token_reduction_reference_pct']}%, "
        f"counting methodology differs; see README)"
    )
    print(f"ffn2 weight fetch reduction {report.ffn2_reduction_pct:.1f}%")
    print(
        f"total fetch reduction {report.total_reduction_pct:.1f}% "
        f"({report.total_bytes_pruned:,} of {report.total_bytes_baseline:,} bytes)"
    )
    print(f"sram check: {'pass' if check.ok else 'FAIL: ' + '; '.join(check.failures[:3])}")
    return 0 if check.ok else 1


# -------------------------------------------------------------- analyze


def _cmd_analyze(args) -> int:
    if args.trace:
        doc, enc, traces = _load_trace(args.trace)
        counts = [t.tokens_out for t in traces]
        kept = [t.ffn2_kept_dims for t in traces]
        chash = doc.get("config_hash")
    else:
        rc = _resolve_run_config(args)
        if rc.encoder is None:
            raise ConfigError("analyze without a trace needs a preset or explicit dims")
        enc = rc.encoder
        counts = token_schedule(enc)
        kept = _fixture_kept_dims(enc, args.ffn2)
        chash = rc.config_hash()

    dense = dense_macs(enc)
    token_pruned = count_macs(enc, counts)
    breakdowns = {"dense": dense}
    print(f"dense MACs: {dense.grand_total / 1e9:.2f} G ({dense.grand_total:,})")

    reductions = {}
    if counts != [enc.num_tokens] * enc.num_layers:
        red = token_pruned.reduction_vs(dense)
        reductions["token_pruning_pct"] = 100.0 * red
        breakdowns["token-pruned"] = token_pruned
        print(
            f"token-pruned MACs: {token_pruned.grand_total / 1e9:.2f} G "
            f"(reduction {100 * red:.1f}%)"
        )
    combined = None
    if kept is not None:
        combined = count_macs(enc, counts, kept)
        red = combined_reduction(enc, kept, counts)
        reductions["combined_pct"] = 100.0 * red
        breakdowns["combined"] = combined
        print(
            f"combined MACs (with ffn2 pruning): {combined.grand_total / 1e9:.2f} G "
            f"(reduction {100 * red:.1f}%)"
        )

    failures = consistency_check(enc, dense) + consistency_check(enc, token_pruned)
    if combined is not None:
        failures += consistency_check(enc, combined)
    payload = {
        "kind": "analysis",
        "name": args.name,
        **provenance(chash),
        "config": enc.to_dict(),
        "macs": (combined or token_pruned).to_dict(),
        "macs_dense": dense.to_dict(),
        "reductions": reductions,
        "consistency_failures": failures,
    }
    rich = breakdowns.get("combined") or breakdowns.get("token-pruned") or dense
    _emit(payload, args.report, mac_csv_rows(rich),
          None if args.no_figures else (lambda p: fig_macs(breakdowns, p)))
    if failures:
        print("consistency FAIL: " + "; ".join(failures[:3]), file=sys.stderr)
        return 1
    return 0


# -------------------------------------------------------------- compare


def _cmd_compare(args) -> int:
    reports = []
    for path in args.reports:
        with open(path) as fh:
            doc = json.load(fh)
        name = doc.get("name") or path.rsplit("/", 1)[-1].rsplit(".", 1)[0]
        reports.append(
            {
                "name": name,
                "config": doc.get("config"),
                "tool_version": doc.get("tool_version", "unknown"),
                "macs": doc.get("macs"),
                "cycles": doc.get("cycles"),
                "traffic": doc.get("traffic"),
            }
        )
    table = compare_runs(reports, force=args.force)
    payload = {"kind": "comparison", "tool_version": __version__, "runs": table}
    _emit(payload, args.report, compare_csv_rows(table),
          None if args.no_figures else (lambda p: fig_compare(table, p)))
    header, rows = compare_csv_rows(table)
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) for i, h in enumerate(header)]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for row in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))
    return 0


# ----------------------------------------------------------------- main


def _add_common(p: argparse.ArgumentParser, report: bool = True) -> None:
    p.add_argument("--config", help="run configuration file")
    p.add_argument("--preset", help="model preset name (default deit-s)")
    p.add_argument("--seed", type=int, help="seed override")
    if report:
        p.add_argument("--report", help="output stem for <stem>.json/.csv/.png")
        p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
        p.add_argument("--name", default="run", help="run name embedded in reports")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vitaccel", description=__doc__)
    parser.add_argument("--version", action="version", version=f"vitaccel {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic weight container")
    _add_common(p, report=False)
    p.add_argument("--out", required=True, help="container path to write")
    p.add_argument("--include-input", action="store_true",
                   help="embed a synthetic 'input' tensor")
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("run", help="run the INT8 engine and write a trace")
    _add_common(p, report=False)
    p.add_argument("--model", help="weight container path")
    p.add_argument("--synth", action="store_true", help="synthesize model and input")
    p.add_argument("--input", help="container holding an 'input' tensor")
    p.add_argument("--trace-out", help="trace JSON path")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("simulate", help="cycle model over a trace")
    _add_common(p)
    p.add_argument("--trace", help="trace JSON from `run`")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("traffic", help="external-memory traffic accounting")
    _add_common(p)
    p.add_argument("--trace", help="trace JSON from `run`")
    p.add_argument("--fetch-events", type=int, help="token fetches per layer")
    p.add_argument("--ffn2", choices=["none", "fixture"], default=None,
                   help="ffn2 kept dims when no trace is given (default: fixture when it fits)")
    p.set_defaults(fn=_cmd_traffic)

    p = sub.add_parser("analyze", help="closed-form MAC counting")
    _add_common(p)
    p.add_argument("--trace", help="optional trace JSON for measured counts")
    p.add_argument("--ffn2", choices=["none", "fixture"], default=None,
                   help="ffn2 kept dims when no trace is given (default: fixture when it fits)")
    p.set_defaults(fn=_cmd_analyze)

    p = sub.add_parser("compare", help="align multiple report JSONs")
    p.add_argument("reports", nargs="+", help="report JSON files")
    p.add_argument("--report", help="output stem for <stem>.json/.csv/.png")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--force", action="store_true", help="allow mixed tool versions")
    p.set_defaults(fn=_cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Run configuration files: INI-style sections, strict key validation,
and the provenance hash embedded in every report.

Example:

    [model]
    preset = deit-s
    activation = relu

    [pruning]
    keep_ratio = 0.5
    prune_layers = 4,7,10
    ffn2_thresholds = 1.5,1.5,1.5,1.0,1.0,1.0,1.0,1.0,1.0,0.5,0.5,0.8
    ffn2_pruning = true

    [pe]
    clock_hz = 1e9

    [sram]
    token_kb = 96
    weight_kb = 96
    temp_kb = 40

    [traffic]
    fetch_events = 1

    [run]
    seed = 7

Unknown sections or keys are rejected with the offending name.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, replace

from .model import ConfigError, EncoderConfig, preset
from .perf import PeConfig
from .traffic import SramConfig

_SECTIONS = {
    "model": {"preset", "container", "activation", "num_layers", "embed_dim",
              "num_heads", "head_dim", "ffn_dim", "num_tokens"},
    "pruning": {"keep_ratio", "prune_layers", "ffn2_thresholds", "ffn2_pruning"},
    "pe": {"num_groups", "arrays_per_group", "macs_per_array", "clock_hz",
           "softmax_cycles_per_row", "sorter_setup_cycles"},
    "sram": {"token_kb", "weight_kb", "temp_kb", "total_kb"},
    "traffic": {"fetch_events"},
    "run": {"seed", "trace_out", "report_out"},
}


@dataclass
class RunConfig:
    # ``encoder`` is None when the model comes from a container; structural
    # fields then arrive at load time and ``encoder_overrides`` (the pruning
    # schedule from the file) is applied on top via ``bind_encoder``.
    encoder: EncoderConfig | None
    pe: PeConfig
    sram: SramConfig
    fetch_events: int = 1
    seed: int = 0
    preset_name: str | None = None
    container_path: str | None = None
    trace_out: str | None = None
    report_out: str | None = None
    encoder_overrides: dict | None = None

    def bind_encoder(self, loaded: EncoderConfig) -> None:
        self.encoder = replace(loaded, **(self.encoder_overrides or {}))

    def resolved_dict(self) -> dict:
        if self.encoder is None:
            raise ConfigError("run config has no bound encoder (container not loaded yet)")
        return {
            "encoder": self.encoder.to_dict(),
            "pe": self.pe.to_dict(),
            "sram": self.sram.to_dict(),
            "fetch_events": self.fetch_events,
            "seed": self.seed,
        }

    def config_hash(self) -> str:
        return config_hash(self.resolved_dict())


def config_hash(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def default_run_config(preset_name: str = "deit-s") -> RunConfig:
    return RunConfig(
        encoder=preset(preset_name),
        pe=PeConfig(),
        sram=SramConfig(),
        preset_name=preset_name,
    )


def _parse_bool(raw: str, where: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{where}: expected a boolean, got {raw!r}")


def _parse_float_list(raw: str, where: str) -> tuple[float, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    try:
        return tuple(float(tok) for tok in raw.split(","))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_int_list(raw: str, where: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    try:
        return tuple(int(tok) for tok in raw.split(","))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_run_config(path: str) -> RunConfig:
    """Parse and validate a run configuration file."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")

    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    model_sec = parser["model"] if parser.has_section("model") else {}
    preset_name = model_sec.get("preset")
    container_path = model_sec.get("container")
    if preset_name and container_path:
        raise ConfigError("[model] preset and container are mutually exclusive")

    if preset_name:
        encoder = preset(preset_name)
    elif container_path:
        # Structural fields come from the container at load time; start from
        # a placeholder so pruning overrides can still be validated here.
        encoder = None
    else:
        dims = {}
        for key in ("num_layers", "embed_dim", "num_heads", "head_dim", "ffn_dim", "num_tokens"):
            if key not in model_sec:
                raise ConfigError(f"[model] needs preset, container, or explicit dims ({key} missing)")
            dims[key] = int(model_sec[key])
        encoder = EncoderConfig(**dims)

    overrides = {}
    if "activation" in model_sec:
        overrides["activation"] = model_sec["activation"].strip()
    if parser.has_section("pruning"):
        sec = parser["pruning"]
        if "keep_ratio" in sec:
            overrides["keep_ratio"] = float(sec["keep_ratio"])
        if "prune_layers" in sec:
            overrides["prune_layers"] = _parse_int_list(sec["prune_layers"], "[pruning] prune_layers")
        if "ffn2_thresholds" in sec:
            overrides["ffn2_thresholds"] = _parse_float_list(
                sec["ffn2_thresholds"], "[pruning] ffn2_thresholds"
            )
        if "ffn2_pruning" in sec:
            overrides["ffn2_pruning"] = _parse_bool(sec["ffn2_pruning"], "[pruning] ffn2_pruning")
    if encoder is not None and overrides:
        encoder = replace(encoder, **overrides)

    pe_kwargs = {}
    if parser.has_section("pe"):
        sec = parser["pe"]
        for key in ("num_groups", "arrays_per_group", "macs_per_array",
                    "softmax_cycles_per_row", "sorter_setup_cycles"):
            if key in sec:
                pe_kwargs[key] = int(sec[key])
        if "clock_hz" in sec:
            pe_kwargs["clock_hz"] = float(sec["clock_hz"])
    pe = PeConfig(**pe_kwargs)

    sram_kwargs = {}
    if parser.has_section("sram"):
        sec = parser["sram"]
        for key in ("token_kb", "weight_kb", "temp_kb", "total_kb"):
            if key in sec:
                sram_kwargs[key] = int(sec[key])
    sram = SramConfig(**sram_kwargs)

    fetch_events = 1
    if parser.has_section("traffic") and "fetch_events" in parser["traffic"]:
        fetch_events = int(parser["traffic"]["fetch_events"])

    seed = 0
    trace_out = report_out = None
    if parser.has_section("run"):
        sec = parser["run"]
        if "seed" in sec:
            seed = int(sec["seed"])
        trace_out = sec.get("trace_out")
        report_out = sec.get("report_out")

    return RunConfig(
        encoder=encoder, pe=pe, sram=sram, fetch_events=fetch_events, seed=seed,
        preset_name=preset_name, container_path=container_path,
        trace_out=trace_out, report_out=report_out,
        encoder_overrides=overrides if encoder is None else None,
    )

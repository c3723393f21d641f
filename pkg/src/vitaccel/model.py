"""Encoder configuration, weight containers and synthetic model generation.

The on-disk weight container is a little-endian binary format:

    magic   4s   b"VPSW"
    version u16  currently 1
    config  6 x u32  num_layers, embed_dim, num_heads, head_dim, ffn_dim, num_tokens
    activation u8    0 = relu, 1 = gelu_tanh
    n_tensors  u32
    table entries, each:
        name_len u16, name bytes (utf-8)
        dtype u8        0 = i8, 1 = f32
        ndim u8, dims u32 * ndim
        scale f64, zero_point i32
        offset u64      absolute file offset of the raw payload
    payload: raw tensors, little-endian, row-major

Per-layer tensors are named ``layer<i>.<name>`` with 1-based layer indices
(wq, wk, wv, wproj, wffn1, wffn2, ln1_gamma, ln1_beta, ln2_gamma, ln2_beta).
An optional tensor named ``input`` carries a token-embedding matrix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .quant import QuantTensor

MAGIC = b"VPSW"
VERSION = 1

_DTYPE_I8 = 0
_DTYPE_F32 = 1

SYNTH_WEIGHT_SCALE = 0.02

ACTIVATIONS = ("relu", "gelu_tanh")


class ConfigError(ValueError):
    """Invalid encoder or run configuration."""


class ContainerError(Exception):
    """Base class for weight-container errors; ``code`` identifies the kind."""

    code = "container"


class CorruptHeaderError(ContainerError):
    code = "corrupt_header"


class ShapeMismatchError(ContainerError):
    code = "shape_mismatch"


class UnknownDtypeError(ContainerError):
    code = "unknown_dtype"


@dataclass(frozen=True)
class EncoderConfig:
    """Model hyperparameters plus the pruning schedule for a run.

    ``prune_layers`` lists 1-based layer indices; token pruning runs at the
    start of each listed layer so that layer already executes on the reduced
    token set. ``ffn2_thresholds`` has one entry per layer and is only
    consulted when ``ffn2_pruning`` is enabled (which requires relu, since
    the dimension accumulator is defined over non-negative activations).
    """

    num_layers: int
    embed_dim: int
    num_heads: int
    head_dim: int
    ffn_dim: int
    num_tokens: int
    prune_layers: tuple[int, ...] = ()
    keep_ratio: float = 1.0
    ffn2_thresholds: tuple[float, ...] = ()
    ffn2_pruning: bool = False
    activation: str = "relu"

    def __post_init__(self) -> None:
        for name in ("num_layers", "embed_dim", "num_heads", "head_dim", "ffn_dim", "num_tokens"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.embed_dim != self.num_heads * self.head_dim:
            raise ConfigError(
                f"embed_dim {self.embed_dim} != num_heads {self.num_heads} x head_dim {self.head_dim}"
            )
        if not (0.0 < self.keep_ratio <= 1.0):
            raise ConfigError(f"keep_ratio must be in (0, 1], got {self.keep_ratio}")
        if list(self.prune_layers) != sorted(set(self.prune_layers)):
            raise ConfigError(f"prune_layers must be strictly increasing, got {self.prune_layers}")
        for layer in self.prune_layers:
            if not (1 <= layer <= self.num_layers):
                raise ConfigError(f"prune layer {layer} outside [1, {self.num_layers}]")
        if self.ffn2_thresholds and len(self.ffn2_thresholds) != self.num_layers:
            raise ConfigError(
                f"ffn2_thresholds needs {self.num_layers} entries, got {len(self.ffn2_thresholds)}"
            )
        if any(t < 0 for t in self.ffn2_thresholds):
            raise ConfigError("ffn2_thresholds must be non-negative")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.ffn2_pruning:
            if self.activation != "relu":
                raise ConfigError("ffn2_pruning requires activation=relu")
            if not self.ffn2_thresholds:
                raise ConfigError("ffn2_pruning requires ffn2_thresholds")

    def thresholds_or_zero(self) -> tuple[float, ...]:
        return self.ffn2_thresholds or (0.0,) * self.num_layers

    def param_count(self) -> int:
        """Encoder weight element count: L x (4 d^2 + 2 d ffn_dim)."""
        d = self.embed_dim
        return self.num_layers * (4 * d * d + 2 * d * self.ffn_dim)

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "embed_dim": self.embed_dim,
            "num_heads": self.num_heads,
            "head_dim": self.head_dim,
            "ffn_dim": self.ffn_dim,
            "num_tokens": self.num_tokens,
            "prune_layers": list(self.prune_layers),
            "keep_ratio": self.keep_ratio,
            "ffn2_thresholds": list(self.ffn2_thresholds),
            "ffn2_pruning": self.ffn2_pruning,
            "activation": self.activation,
        }

    @staticmethod
    def from_dict(d: dict) -> "EncoderConfig":
        return EncoderConfig(
            num_layers=int(d["num_layers"]),
            embed_dim=int(d["embed_dim"]),
            num_heads=int(d["num_heads"]),
            head_dim=int(d["head_dim"]),
            ffn_dim=int(d["ffn_dim"]),
            num_tokens=int(d["num_tokens"]),
            prune_layers=tuple(int(x) for x in d.get("prune_layers", ())),
            keep_ratio=float(d.get("keep_ratio", 1.0)),
            ffn2_thresholds=tuple(float(x) for x in d.get("ffn2_thresholds", ())),
            ffn2_pruning=bool(d.get("ffn2_pruning", False)),
            activation=str(d.get("activation", "relu")),
        )


# Layer-adaptive FFN2 thresholds used by the DeiT-S preset.
DEIT_S_FFN2_THRESHOLDS = (1.5, 1.5, 1.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.8)


def deit_small() -> EncoderConfig:
    """DeiT-S encoder (12 layers, d=384, 6 heads, ffn 1536, 197 tokens) with
    the default pruning schedule: keep ratio 0.5 at layers 4/7/10 and
    layer-adaptive FFN2 thresholds."""
    return EncoderConfig(
        num_layers=12,
        embed_dim=384,
        num_heads=6,
        head_dim=64,
        ffn_dim=1536,
        num_tokens=197,
        prune_layers=(4, 7, 10),
        keep_ratio=0.5,
        ffn2_thresholds=DEIT_S_FFN2_THRESHOLDS,
        ffn2_pruning=True,
        activation="relu",
    )


PRESETS = {"deit-s": deit_small}


def preset(name: str) -> EncoderConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None


@dataclass
class LayerWeights:
    """One encoder layer's weights. GEMM weights are int8; layernorm
    parameters stay in real precision."""

    wq: QuantTensor
    wk: QuantTensor
    wv: QuantTensor
    wproj: QuantTensor
    wffn1: QuantTensor
    wffn2: QuantTensor
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray


_LAYER_QUANT_FIELDS = ("wq", "wk", "wv", "wproj", "wffn1", "wffn2")
_LAYER_FLOAT_FIELDS = ("ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta")


def _expected_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, f = config.embed_dim, config.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(1, config.num_layers + 1):
        shapes[f"layer{i}.wq"] = (d, d)
        shapes[f"layer{i}.wk"] = (d, d)
        shapes[f"layer{i}.wv"] = (d, d)
        shapes[f"layer{i}.wproj"] = (d, d)
        shapes[f"layer{i}.wffn1"] = (d, f)
        shapes[f"layer{i}.wffn2"] = (f, d)
        for name in _LAYER_FLOAT_FIELDS:
            shapes[f"layer{i}.{name}"] = (d,)
    return shapes


@dataclass
class _TableEntry:
    name: str
    dtype: int
    shape: tuple[int, ...]
    scale: float
    zero_point: int
    offset: int

    @property
    def nbytes(self) -> int:
        n = 1
        for dim in self.shape:
            n *= dim
        return n * (1 if self.dtype == _DTYPE_I8 else 4)


def save_model(
    path: str,
    config: EncoderConfig,
    layers: list[LayerWeights],
    extras: dict[str, QuantTensor | np.ndarray] | None = None,
) -> None:
    """Write a weight container. ``extras`` may carry additional tensors such
    as ``input`` (QuantTensor for i8, float32 ndarray for f32)."""
    if len(layers) != config.num_layers:
        raise ShapeMismatchError(
            f"expected {config.num_layers} layers, got {len(layers)}"
        )
    tensors: list[tuple[str, int, np.ndarray, float, int]] = []
    for i, lw in enumerate(layers, start=1):
        for name in _LAYER_QUANT_FIELDS:
            qt: QuantTensor = getattr(lw, name)
            tensors.append((f"layer{i}.{name}", _DTYPE_I8, qt.data, qt.scale, qt.zero_point))
        for name in _LAYER_FLOAT_FIELDS:
            arr = np.asarray(getattr(lw, name), dtype=np.float32)
            tensors.append((f"layer{i}.{name}", _DTYPE_F32, arr, 1.0, 0))
    for name, value in (extras or {}).items():
        if isinstance(value, QuantTensor):
            tensors.append((name, _DTYPE_I8, value.data, value.scale, value.zero_point))
        else:
            tensors.append((name, _DTYPE_F32, np.asarray(value, dtype=np.float32), 1.0, 0))

    act_code = ACTIVATIONS.index(config.activation)
    header = MAGIC + struct.pack(
        "<HIIIIIIBI",
        VERSION,
        config.num_layers,
        config.embed_dim,
        config.num_heads,
        config.head_dim,
        config.ffn_dim,
        config.num_tokens,
        act_code,
        len(tensors),
    )

    table_size = 0
    for name, _dtype, arr, _scale, _zp in tensors:
        table_size += 2 + len(name.encode()) + 1 + 1 + 4 * arr.ndim + 8 + 4 + 8

    offset = len(header) + table_size
    table = bytearray()
    payload = bytearray()
    for name, dtype, arr, scale, zp in tensors:
        raw = np.ascontiguousarray(arr)
        if dtype == _DTYPE_I8:
            raw_bytes = raw.astype("<i1").tobytes()
        else:
            raw_bytes = raw.astype("<f4").tobytes()
        nbuf = name.encode()
        table += struct.pack("<H", len(nbuf)) + nbuf
        table += struct.pack("<BB", dtype, arr.ndim)
        table += struct.pack(f"<{arr.ndim}I", *arr.shape)
        table += struct.pack("<di", scale, zp)
        table += struct.pack("<Q", offset)
        payload += raw_bytes
        offset += len(raw_bytes)

    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(bytes(table))
        fh.write(bytes(payload))


def _parse_header(blob: bytes) -> tuple[EncoderConfig, int, int]:
    if len(blob) < 35:
        raise CorruptHeaderError("file too short for container header")
    if blob[:4] != MAGIC:
        raise CorruptHeaderError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (version, num_layers, d, heads, head_dim, ffn, tokens, act_code, n_tensors) = struct.unpack(
        "<HIIIIIIBI", blob[4:35]
    )
    if version != VERSION:
        raise CorruptHeaderError(f"unsupported container version {version}")
    if act_code >= len(ACTIVATIONS):
        raise CorruptHeaderError(f"bad activation code {act_code}")
    try:
        config = EncoderConfig(
            num_layers=num_layers,
            embed_dim=d,
            num_heads=heads,
            head_dim=head_dim,
            ffn_dim=ffn,
            num_tokens=tokens,
            activation=ACTIVATIONS[act_code],
        )
    except ConfigError as exc:
        raise CorruptHeaderError(f"invalid config in header: {exc}") from exc
    return config, n_tensors, 35


def load_model(path: str) -> tuple[EncoderConfig, list[LayerWeights], dict[str, QuantTensor | np.ndarray]]:
    """Load a weight container; returns (config, layers, extra tensors).

    The returned config carries the structural fields from the header and
    default (disabled) pruning settings; apply a run configuration on top.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    config, n_tensors, pos = _parse_header(blob)

    entries: list[_TableEntry] = []
    for _ in range(n_tensors):
        try:
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + name_len].decode()
            pos += name_len
            dtype, ndim = struct.unpack_from("<BB", blob, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            scale, zp = struct.unpack_from("<di", blob, pos)
            pos += 12
            (offset,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
        except (struct.error, UnicodeDecodeError) as exc:
            raise CorruptHeaderError(f"truncated or malformed tensor table: {exc}") from exc
        if dtype not in (_DTYPE_I8, _DTYPE_F32):
            raise UnknownDtypeError(f"tensor {name!r} has unknown dtype code {dtype}")
        entries.append(_TableEntry(name, dtype, tuple(shape), scale, zp, offset))

    spans = sorted((e.offset, e.offset + e.nbytes, e.name) for e in entries)
    for (a0, a1, aname), (b0, _b1, bname) in zip(spans, spans[1:]):
        if b0 < a1:
            raise ShapeMismatchError(f"tensor payloads overlap: {aname!r} and {bname!r}")
    for e in entries:
        if e.offset + e.nbytes > len(blob):
            raise ShapeMismatchError(
                f"tensor {e.name!r} payload truncated: needs bytes up to "
                f"{e.offset + e.nbytes}, file has {len(blob)}"
            )

    expected = _expected_shapes(config)
    by_name: dict[str, _TableEntry] = {}
    for e in entries:
        if e.name in by_name:
            raise ShapeMismatchError(f"duplicate tensor {e.name!r}")
        by_name[e.name] = e
    missing = sorted(set(expected) - set(by_name))
    if missing:
        raise ShapeMismatchError(f"container is missing tensors: {missing[:4]}...")

    def read_entry(e: _TableEntry):
        raw = blob[e.offset : e.offset + e.nbytes]
        if e.dtype == _DTYPE_I8:
            arr = np.frombuffer(raw, dtype="<i1").reshape(e.shape).astype(np.int8)
            return QuantTensor(arr, e.scale, e.zero_point)
        arr = np.frombuffer(raw, dtype="<f4").reshape(e.shape).astype(np.float32)
        return arr

    for name, shape in expected.items():
        if by_name[name].shape != shape:
            raise ShapeMismatchError(
                f"tensor {name!r} has shape {by_name[name].shape}, expected {shape}"
            )

    layers: list[LayerWeights] = []
    for i in range(1, config.num_layers + 1):
        kwargs = {}
        for name in _LAYER_QUANT_FIELDS:
            kwargs[name] = read_entry(by_name[f"layer{i}.{name}"])
        for name in _LAYER_FLOAT_FIELDS:
            kwargs[name] = read_entry(by_name[f"layer{i}.{name}"])
        layers.append(LayerWeights(**kwargs))

    extras = {
        e.name: read_entry(e) for e in entries if e.name not in expected
    }
    if "input" in extras:
        inp = extras["input"]
        shp = inp.shape if isinstance(inp, QuantTensor) else inp.shape
        if tuple(shp) != (config.num_tokens, config.embed_dim):
            raise ShapeMismatchError(
                f"input tensor has shape {tuple(shp)}, expected "
                f"({config.num_tokens}, {config.embed_dim})"
            )
    return config, layers, extras


def synth_model(config: EncoderConfig, seed: int) -> list[LayerWeights]:
    """Deterministic pseudo-random weights: int8 uniform over [-127, 127]
    with scale 0.02; layernorm gamma near 1, beta near 0. The same seed
    always produces bit-identical weights."""
    rng = np.random.default_rng([int(seed), 0])
    d, f = config.embed_dim, config.ffn_dim
    layers = []
    for _ in range(config.num_layers):
        def w(rows: int, cols: int) -> QuantTensor:
            data = rng.integers(-127, 128, size=(rows, cols), dtype=np.int8)
            return QuantTensor(data, SYNTH_WEIGHT_SCALE)

        layers.append(
            LayerWeights(
                wq=w(d, d),
                wk=w(d, d),
                wv=w(d, d),
                wproj=w(d, d),
                wffn1=w(d, f),
                wffn2=w(f, d),
                ln1_gamma=rng.uniform(0.9, 1.1, d).astype(np.float32),
                ln1_beta=rng.uniform(-0.1, 0.1, d).astype(np.float32),
                ln2_gamma=rng.uniform(0.9, 1.1, d).astype(np.float32),
                ln2_beta=rng.uniform(-0.1, 0.1, d).astype(np.float32),
            )
        )
    return layers


def synth_input(config: EncoderConfig, seed: int) -> QuantTensor:
    """Deterministic token-embedding matrix [num_tokens x embed_dim]."""
    rng = np.random.default_rng([int(seed), 1])
    data = rng.integers(-127, 128, size=(config.num_tokens, config.embed_dim), dtype=np.int8)
    return QuantTensor(data, SYNTH_WEIGHT_SCALE)


def with_run_overrides(config: EncoderConfig, **overrides) -> EncoderConfig:
    """Return a copy of ``config`` with pruning-schedule fields replaced."""
    return replace(config, **overrides)

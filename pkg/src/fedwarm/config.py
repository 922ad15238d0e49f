"""Experiment config files: INI-style sections, presets, round-trippable echo.

Grammar (all keys optional unless noted):

    [experiment]
    preset = mnist-fedavg          ; start from a named preset, keys below override
    mode = fedavg                  ; required: centralized | fedavg | warmup-scratch | warmup-pretrained
    seed = 42
    output_dir = runs/my-exp
    workers = 1

    [dataset]
    type = idx | synthetic         ; required
    train_images = path            ; idx only (gzipped or raw IDX)
    train_labels = path
    test_images = path
    test_labels = path
    num_classes = 10               ; optional for idx, required for synthetic
    samples_per_class = 200        ; synthetic only
    feature_shape = 12x12x1        ; synthetic only ("784" for flat)
    class_separation = 0.55        ; synthetic only

    [partition]
    num_clients = 10               ; required
    min_samples = 800              ; required
    max_samples = 1000             ; required
    warmup_fraction = 0.05

    [model]
    preset = mlp                   ; or an inline stack:
    layers = conv2d:1:8:3, relu, flatten, dense:800:10
    input_shape = 12x12x1          ; with layers; defaults to the dataset shape

    [hyperparams]
    lr = 0.1                       ; all five required
    batch_size = 10
    local_epochs = 1
    rounds = 200
    participation_fraction = 0.2

    [transfer]
    freeze_layer_count = 2
    warmup_epochs = 10
    pretrain_labels = 20-39        ; or comma list; warmup-pretrained only

Unknown sections or keys, type errors, and constraint violations are
rejected with the offending line number when it exists in the file.
"""

from __future__ import annotations

import configparser
import copy
import os
from dataclasses import dataclass, replace

from . import presets
from .data import PartitionSpec
from .engine import Hyperparams, TransferConfig
from .errors import ConfigError, ConfigParseError
from .nn import Conv2d, Dense, Flatten, Layer, Relu

MODES = ("centralized", "fedavg", "warmup-scratch", "warmup-pretrained")

_TRANSFER_FOR_MODE = {
    "centralized": "none",
    "fedavg": "none",
    "warmup-scratch": "warmup_scratch",
    "warmup-pretrained": "warmup_pretrained",
}

_SCHEMA = {
    "experiment": ("preset", "mode", "seed", "output_dir", "workers"),
    "dataset": (
        "type", "train_images", "train_labels", "test_images", "test_labels",
        "num_classes", "samples_per_class", "feature_shape", "class_separation",
    ),
    "partition": ("num_clients", "min_samples", "max_samples", "warmup_fraction"),
    "model": ("preset", "layers", "input_shape"),
    "hyperparams": (
        "lr", "batch_size", "local_epochs", "rounds", "participation_fraction",
    ),
    "transfer": ("freeze_layer_count", "warmup_epochs", "pretrain_labels"),
}

_IDX_KEYS = ("train_images", "train_labels", "test_images", "test_labels")
_SYNTH_KEYS = ("samples_per_class", "feature_shape", "class_separation")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    num_classes: int | None = None
    samples_per_class: int | None = None
    feature_shape: tuple[int, ...] | None = None
    class_separation: float | None = None


@dataclass(frozen=True)
class ModelConfig:
    preset: str | None = None
    layers: tuple[Layer, ...] | None = None
    input_shape: tuple[int, ...] | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    seed: int
    output_dir: str
    workers: int
    dataset: DatasetConfig
    partition: PartitionSpec
    model: ModelConfig
    hyperparams: Hyperparams
    transfer: TransferConfig


# ---------------------------------------------------------------------------
# small field parsers


def parse_shape(text: str) -> tuple[int, ...]:
    parts = [p.strip() for p in text.lower().split("x") if p.strip()]
    if not parts:
        raise ValueError(f"empty shape {text!r}")
    dims = tuple(int(p) for p in parts)
    if any(d < 1 for d in dims) or len(dims) > 3:
        raise ValueError(f"shape {text!r} must be 1-3 positive dims")
    return dims


def format_shape(shape: tuple[int, ...]) -> str:
    return "x".join(str(d) for d in shape)


def parse_labels(text: str) -> tuple[int, ...]:
    text = text.strip()
    if "-" in text and "," not in text:
        lo_s, _, hi_s = text.partition("-")
        lo, hi = int(lo_s), int(hi_s)
        if hi < lo:
            raise ValueError(f"label range {text!r} is reversed")
        return tuple(range(lo, hi + 1))
    return tuple(sorted({int(p) for p in text.split(",") if p.strip()}))


def format_labels(labels: tuple[int, ...]) -> str:
    labels = tuple(sorted(labels))
    if len(labels) > 2 and labels == tuple(range(labels[0], labels[-1] + 1)):
        return f"{labels[0]}-{labels[-1]}"
    return ",".join(str(l) for l in labels)


def parse_layers(text: str) -> tuple[Layer, ...]:
    out: list[Layer] = []
    for item in (i.strip() for i in text.split(",")):
        if not item:
            continue
        parts = item.split(":")
        kind = parts[0].lower()
        args = [int(p) for p in parts[1:]]
        if kind == "dense" and len(args) == 2:
            out.append(Dense(*args))
        elif kind == "conv2d" and len(args) in (3, 4):
            out.append(Conv2d(*args))
        elif kind == "relu" and not args:
            out.append(Relu())
        elif kind == "flatten" and not args:
            out.append(Flatten())
        else:
            raise ValueError(
                f"bad layer {item!r}; expected dense:in:out, "
                f"conv2d:in:out:k[:stride], relu, or flatten"
            )
    if not out:
        raise ValueError("layer list is empty")
    return tuple(out)


def format_layers(layers: tuple[Layer, ...]) -> str:
    parts = []
    for layer in layers:
        if isinstance(layer, Dense):
            parts.append(f"dense:{layer.in_dim}:{layer.out_dim}")
        elif isinstance(layer, Conv2d):
            s = f"conv2d:{layer.in_channels}:{layer.out_channels}:{layer.kernel_size}"
            if layer.stride != 1:
                s += f":{layer.stride}"
            parts.append(s)
        else:
            parts.append(type(layer).__name__.lower())
    return ", ".join(parts)


# ---------------------------------------------------------------------------
# parsing


def _line_of(text: str | None, section: str, key: str | None = None) -> int | None:
    if text is None:
        return None
    current = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        s = raw_line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip().lower()
            if key is None and current == section:
                return lineno
            continue
        if key is None or current != section:
            continue
        body = raw_line.lstrip()
        if body.lower().startswith(key.lower()):
            rest = body[len(key):].lstrip()
            if rest.startswith("=") or rest.startswith(":"):
                return lineno
    return None


def _read_sections(text: str, origin: str) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigParseError(str(exc)) from None
    raw = {s.lower(): {k.lower(): v for k, v in cp[s].items()} for s in cp.sections()}
    for section, kv in raw.items():
        if section not in _SCHEMA:
            raise ConfigParseError(
                f"unknown section [{section}]", _line_of(text, section)
            )
        for key in kv:
            if key not in _SCHEMA[section]:
                raise ConfigParseError(
                    f"[{section}] unknown key {key!r}", _line_of(text, section, key)
                )
    return raw


def parse_config(path: str) -> ExperimentConfig:
    """Parse a config file (possibly preset-based) into an ExperimentConfig."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, origin=path)


def config_from_preset(name: str) -> ExperimentConfig:
    known = presets.experiment_presets()
    if name not in known:
        raise ConfigError(
            f"unknown experiment preset {name!r}, choose from {sorted(known)}"
        )
    return _build(copy.deepcopy(known[name]), None, default_name=name)


def parse_config_text(text: str, origin: str = "<config>") -> ExperimentConfig:
    raw = _read_sections(text, origin)
    exp = raw.get("experiment", {})
    preset_name = exp.pop("preset", None)
    if preset_name is not None:
        known = presets.experiment_presets()
        if preset_name not in known:
            raise ConfigParseError(
                f"unknown experiment preset {preset_name!r}, "
                f"choose from {sorted(known)}",
                _line_of(text, "experiment", "preset"),
            )
        merged = copy.deepcopy(known[preset_name])
        for section, kv in raw.items():
            merged.setdefault(section, {}).update(kv)
        stem = preset_name
    else:
        merged = raw
        stem = os.path.splitext(os.path.basename(origin))[0]
    return _build(merged, text, default_name=stem)


def _build(raw: dict[str, dict[str, str]], text: str | None,
           default_name: str) -> ExperimentConfig:
    def fail(section: str, key: str | None, message: str):
        where = f"[{section}]" + (f" {key}" if key else "")
        raise ConfigParseError(f"{where}: {message}", _line_of(text, section, key))

    def get(section: str, key: str, convert, default=None, required=False):
        value = raw.get(section, {}).get(key)
        if value is None:
            if required:
                fail(section, None, f"missing required key {key!r}")
            return default
        try:
            return convert(value)
        except ValueError as exc:
            fail(section, key, str(exc))

    def wrap(section: str, build):
        # dataclass validators raise ConfigError; map back to the file line
        try:
            return build()
        except ConfigParseError:
            raise
        except ConfigError as exc:
            message = str(exc)
            for key in _SCHEMA[section]:
                if key in message and key in raw.get(section, {}):
                    fail(section, key, message)
            fail(section, None, message)

    mode = get("experiment", "mode", str, required=True)
    if mode not in MODES:
        fail("experiment", "mode", f"must be one of {MODES}, got {mode!r}")
    seed = get("experiment", "seed", int, default=42)
    if seed < 0:
        fail("experiment", "seed", f"must be non-negative, got {seed}")
    workers = get("experiment", "workers", int, default=1)
    if workers < 1:
        fail("experiment", "workers", f"must be positive, got {workers}")
    output_dir = get(
        "experiment", "output_dir", str, default=os.path.join("runs", default_name)
    )

    kind = get("dataset", "type", str, required=True)
    if kind not in ("idx", "synthetic"):
        fail("dataset", "type", f"must be idx or synthetic, got {kind!r}")
    allowed = set(_SCHEMA["dataset"]) - set(_SYNTH_KEYS if kind == "idx" else _IDX_KEYS)
    for key in raw.get("dataset", {}):
        if key not in allowed:
            fail("dataset", key, f"not valid for type {kind}")
    if kind == "idx":
        paths = {k: get("dataset", k, str, required=True) for k in _IDX_KEYS}
        dataset = DatasetConfig(
            kind="idx",
            num_classes=get("dataset", "num_classes", int),
            **paths,
        )
    else:
        dataset = DatasetConfig(
            kind="synthetic",
            num_classes=get("dataset", "num_classes", int, required=True),
            samples_per_class=get("dataset", "samples_per_class", int, required=True),
            feature_shape=get("dataset", "feature_shape", parse_shape, required=True),
            class_separation=get("dataset", "class_separation", float, required=True),
        )

    partition = wrap(
        "partition",
        lambda: PartitionSpec(
            num_clients=get("partition", "num_clients", int, required=True),
            min_samples=get("partition", "min_samples", int, required=True),
            max_samples=get("partition", "max_samples", int, required=True),
            warmup_fraction=get("partition", "warmup_fraction", float, default=0.0),
            seed=seed,
        ),
    )

    model_preset = get("model", "preset", str)
    layers = get("model", "layers", parse_layers)
    if (model_preset is None) == (layers is None):
        fail("model", None, "give exactly one of preset or layers")
    if model_preset is not None and model_preset not in presets.MODEL_PRESETS:
        fail("model", "preset", f"unknown model preset {model_preset!r}, "
                                f"choose from {sorted(presets.MODEL_PRESETS)}")
    model = ModelConfig(
        preset=model_preset,
        layers=layers,
        input_shape=get("model", "input_shape", parse_shape),
    )

    hyperparams = wrap(
        "hyperparams",
        lambda: Hyperparams(
            lr=get("hyperparams", "lr", float, required=True),
            batch_size=get("hyperparams", "batch_size", int, required=True),
            local_epochs=get("hyperparams", "local_epochs", int, required=True),
            rounds=get("hyperparams", "rounds", int, required=True),
            participation_fraction=get(
                "hyperparams", "participation_fraction", float, required=True
            ),
            seed=seed,
        ),
    )

    transfer = wrap(
        "transfer",
        lambda: TransferConfig(
            mode=_TRANSFER_FOR_MODE[mode],
            freeze_layer_count=get("transfer", "freeze_layer_count", int, default=0),
            warmup_epochs=get("transfer", "warmup_epochs", int, default=0),
            pretrain_label_split=get(
                "transfer", "pretrain_labels", parse_labels, default=()
            ),
        ),
    )

    if mode in ("warmup-scratch", "warmup-pretrained") and partition.warmup_fraction <= 0:
        fail("partition", "warmup_fraction",
             f"mode {mode} needs warmup_fraction > 0")

    return ExperimentConfig(
        mode=mode,
        seed=seed,
        output_dir=output_dir,
        workers=workers,
        dataset=dataset,
        partition=partition,
        model=model,
        hyperparams=hyperparams,
        transfer=transfer,
    )


# ---------------------------------------------------------------------------
# serialization (the config.resolved provenance echo)


def format_config(cfg: ExperimentConfig) -> str:
    """Render a config as INI text; parse_config_text inverts this exactly."""
    out: list[str] = []

    def sec(name: str, pairs):
        out.append(f"[{name}]")
        for key, value in pairs:
            if value is not None:
                out.append(f"{key} = {value}")
        out.append("")

    sec("experiment", (
        ("mode", cfg.mode),
        ("seed", cfg.seed),
        ("output_dir", cfg.output_dir),
        ("workers", cfg.workers),
    ))
    d = cfg.dataset
    if d.kind == "idx":
        sec("dataset", (
            ("type", d.kind),
            ("train_images", d.train_images),
            ("train_labels", d.train_labels),
            ("test_images", d.test_images),
            ("test_labels", d.test_labels),
            ("num_classes", d.num_classes),
        ))
    else:
        sec("dataset", (
            ("type", d.kind),
            ("num_classes", d.num_classes),
            ("samples_per_class", d.samples_per_class),
            ("feature_shape", format_shape(d.feature_shape)),
            ("class_separation", repr(d.class_separation)),
        ))
    p = cfg.partition
    sec("partition", (
        ("num_clients", p.num_clients),
        ("min_samples", p.min_samples),
        ("max_samples", p.max_samples),
        ("warmup_fraction", repr(p.warmup_fraction)),
    ))
    m = cfg.model
    sec("model", (
        ("preset", m.preset),
        ("layers", format_layers(m.layers) if m.layers else None),
        ("input_shape", format_shape(m.input_shape) if m.input_shape else None),
    ))
    h = cfg.hyperparams
    sec("hyperparams", (
        ("lr", repr(h.lr)),
        ("batch_size", h.batch_size),
        ("local_epochs", h.local_epochs),
        ("rounds", h.rounds),
        ("participation_fraction", repr(h.participation_fraction)),
    ))
    t = cfg.transfer
    sec("transfer", (
        ("freeze_layer_count", t.freeze_layer_count),
        ("warmup_epochs", t.warmup_epochs),
        ("pretrain_labels",
         format_labels(t.pretrain_label_split) if t.pretrain_label_split else None),
    ))
    return "\n".join(out)


def with_overrides(cfg: ExperimentConfig, seed: int | None = None,
                   workers: int | None = None,
                   output_dir: str | None = None) -> ExperimentConfig:
    """Apply CLI flag overrides; a new seed reaches every seeded component."""
    if seed is not None:
        if seed < 0:
            raise ConfigError(f"seed must be non-negative, got {seed}")
        cfg = replace(
            cfg,
            seed=seed,
            partition=replace(cfg.partition, seed=seed),
            hyperparams=replace(cfg.hyperparams, seed=seed),
        )
    if workers is not None:
        if workers < 1:
            raise ConfigError(f"workers must be positive, got {workers}")
        cfg = replace(cfg, workers=workers)
    if output_dir is not None:
        cfg = replace(cfg, output_dir=output_dir)
    return cfg

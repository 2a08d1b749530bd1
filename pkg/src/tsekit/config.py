"""Run configuration: nested sections, tiny/full presets, YAML files,
dotted-key overrides, and a content hash stamped into checkpoints and
reports.

Every leaf field is addressable as ``section.field`` (``--set train.lr_main=5e-4``);
unknown keys are rejected with the offending dotted key.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

PRESETS = ("tiny", "full")
SETUPS = ("tdsb", "superb")


@dataclass
class DataSection:
    train_manifest: str = ""
    dev_manifest: str = ""
    sample_rate: int = 16000


@dataclass
class BackboneSection:
    preset: str = "tiny"  # {tiny, base-compatible}
    checkpoint: str = ""  # optional pretrained archive to import
    name_map: str = ""  # optional rename table for foreign checkpoints


@dataclass
class AieSection:
    fusion: str = "fpm"  # {fpm, unet}
    source: str = "multi_cnn_plus_transformer"
    channels: int = 64


@dataclass
class SpkEncoderSection:
    kind: str = "mhfa"  # {mhfa, tcn}
    n_heads: int = 8
    key_dim: int = 128
    value_dim: int = 128
    embed_dim: int = 256
    tcn_filters: int = 64
    tcn_hidden: int = 128
    tcn_blocks: int = 3


@dataclass
class TdsbSection:
    enc_filters: int = 64
    enc_kernel: int = 40
    enc_stride: int = 20
    bottleneck: int = 64
    hidden: int = 128
    tcn_kernel: int = 3
    blocks_per_repeat: int = 4
    repeats: int = 2
    fuse_ssl: bool = True
    mask_target: str = "encoder"  # {encoder, fused}
    share_backbone: bool = False


@dataclass
class SuperbSection:
    blstm_layers: int = 3
    blstm_dim: int = 128
    spk_dim: int = 128
    fft_size: int = 1024
    window: int = 1024
    hop: int = 320


@dataclass
class TrainSection:
    lr_main: float = 1e-3
    lr_finetune: float = 2e-5
    freeze_backbone: bool = True
    max_epochs: int = 20
    max_steps: int = 0  # 0 = no cap
    batch_size: int = 4
    clip_norm: float = 5.0
    seed: int = 0
    stop_train_sisdri: float = 0.0  # 0 = disabled


@dataclass
class RunConfig:
    preset: str = "tiny"
    setup: str = "tdsb"  # {tdsb, superb}
    data: DataSection = field(default_factory=DataSection)
    backbone: BackboneSection = field(default_factory=BackboneSection)
    aie: AieSection = field(default_factory=AieSection)
    spk_encoder: SpkEncoderSection = field(default_factory=SpkEncoderSection)
    tdsb: TdsbSection = field(default_factory=TdsbSection)
    superb: SuperbSection = field(default_factory=SuperbSection)
    train: TrainSection = field(default_factory=TrainSection)

    def validate(self) -> "RunConfig":
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset '{self.preset}', choose from {PRESETS}")
        if self.setup not in SETUPS:
            raise ConfigError(f"unknown setup '{self.setup}', choose from {SETUPS}")
        return self


_FULL_OVERRIDES = {
    "backbone.preset": "base-compatible",
    "aie.channels": 256,
    "spk_encoder.tcn_filters": 256,
    "spk_encoder.tcn_hidden": 512,
    "tdsb.enc_filters": 256,
    "tdsb.bottleneck": 256,
    "tdsb.hidden": 512,
    "tdsb.blocks_per_repeat": 8,
    "tdsb.repeats": 4,
    "superb.blstm_dim": 512,
    "superb.spk_dim": 512,
}


def from_preset(preset: str = "tiny", setup: str = "tdsb") -> RunConfig:
    cfg = RunConfig(preset=preset, setup=setup).validate()
    if preset == "full":
        for key, value in _FULL_OVERRIDES.items():
            _set_by_key(cfg, key, value, coerce=False)
    return cfg


# -- dotted-key access ----------------------------------------------------------


def _walk(cfg: RunConfig, dotted: str):
    parts = dotted.split(".")
    obj = cfg
    for part in parts[:-1]:
        if not dataclasses.is_dataclass(obj) or part not in {f.name for f in dataclasses.fields(obj)}:
            raise ConfigError(f"unknown config key '{dotted}'")
        obj = getattr(obj, part)
    leaf = parts[-1]
    if not dataclasses.is_dataclass(obj) or leaf not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown config key '{dotted}'")
    if dataclasses.is_dataclass(getattr(obj, leaf)):
        raise ConfigError(f"config key '{dotted}' is a section, not a value")
    return obj, leaf


def get_by_key(cfg: RunConfig, dotted: str):
    obj, leaf = _walk(cfg, dotted)
    return getattr(obj, leaf)


def _coerce_str(raw: str, current):
    """Parse a command-line string against the current value's type."""
    if isinstance(current, bool):
        lowered = str(raw).strip().lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ValueError(f"cannot parse boolean from {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return str(raw)


def _coerce_native(value, current):
    """Check/adjust a YAML-native scalar against the current value's type."""
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ValueError(f"expected a boolean, got {value!r}")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"expected an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ValueError(f"expected a string, got {value!r}")
    return value


def _set_by_key(cfg: RunConfig, dotted: str, value, coerce: bool = True) -> None:
    obj, leaf = _walk(cfg, dotted)
    current = getattr(obj, leaf)
    try:
        setattr(obj, leaf, _coerce_str(value, current) if coerce else _coerce_native(value, current))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for '{dotted}': {exc}") from exc


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.field=value`` strings in order."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, value = item.split("=", 1)
        _set_by_key(cfg, key.strip(), value.strip())
    return cfg.validate()


# -- files and hashing -------------------------------------------------------------


def to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def save_yaml(cfg: RunConfig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(to_dict(cfg), sort_keys=False))


def _apply_mapping(cfg: RunConfig, mapping: dict, prefix: str = "") -> None:
    for key, value in mapping.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            _apply_mapping(cfg, value, prefix=f"{dotted}.")
        else:
            _set_by_key(cfg, dotted, value, coerce=False)


def from_dict(mapping: dict) -> RunConfig:
    """Build a config from a (possibly partial) nested mapping.

    The mapping's own ``preset`` seeds the defaults, then every given field
    overrides them; unknown keys are rejected.
    """
    if not isinstance(mapping, dict):
        raise ConfigError(f"config document must be a mapping, got {type(mapping).__name__}")
    preset = mapping.get("preset", "tiny")
    setup = mapping.get("setup", "tdsb")
    cfg = from_preset(preset, setup)
    rest = {k: v for k, v in mapping.items() if k not in ("preset", "setup")}
    _apply_mapping(cfg, rest)
    return cfg.validate()


def load_yaml(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return from_dict(doc or {})


# -- ablation grids ------------------------------------------------------------------


def ablation_grid(name: str) -> list[tuple[str, list[str]]]:
    """Named configuration grids as (label, overrides) pairs.

    ``table2`` spans speaker encoder x feature source x fusion variants of
    the extraction study.
    """
    if name != "table2":
        raise ConfigError(f"unknown ablation grid '{name}'")
    return [
        ("tcn_baseline", ["spk_encoder.kind=tcn", "tdsb.fuse_ssl=false"]),
        ("mhfa_only", ["spk_encoder.kind=mhfa", "tdsb.fuse_ssl=false"]),
        ("transformer_ws", ["spk_encoder.kind=mhfa", "tdsb.fuse_ssl=true", "aie.source=transformer_only"]),
        ("single_cnn", ["spk_encoder.kind=mhfa", "tdsb.fuse_ssl=true", "aie.source=single_cnn"]),
        ("multi_cnn_unet", ["spk_encoder.kind=mhfa", "tdsb.fuse_ssl=true", "aie.source=multi_cnn", "aie.fusion=unet"]),
        ("multi_cnn_fpm", ["spk_encoder.kind=mhfa", "tdsb.fuse_ssl=true", "aie.source=multi_cnn", "aie.fusion=fpm"]),
        ("multi_cnn_trf_unet", ["spk_encoder.kind=mhfa", "tdsb.fuse_ssl=true", "aie.source=multi_cnn_plus_transformer", "aie.fusion=unet"]),
        ("multi_cnn_trf_fpm", ["spk_encoder.kind=mhfa", "tdsb.fuse_ssl=true", "aie.source=multi_cnn_plus_transformer", "aie.fusion=fpm"]),
    ]

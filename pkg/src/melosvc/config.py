"""Typed experiment configuration.

Configs are plain dataclasses loadable from YAML.  Parsing is strict:
unknown keys are rejected with their dotted location, so typos fail
fast instead of silently falling back to defaults.  Environment
variables are expanded in path-valued fields only.

Every run archives its fully resolved config next to its outputs, so
any artifact can be traced back to the exact settings that made it.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, get_args, get_origin

import yaml

from .errors import ConfigError, UnknownKeyError

_PATH_FIELDS = {
    "corpus_root",
    "bgm_root",
    "manifest",
    "bgm_manifest",
    "labels_dir",
    "checkpoint",
    "workdir",
}


@dataclass
class DataConfig:
    """Corpus locations and split policy."""

    corpus_root: str = ""
    layout: str = "stems"
    manifest: str = ""
    bgm_manifest: str = ""
    labels_dir: str = "labels"
    holdout_singers: int = 4
    train_ratio: float = 2 / 3
    valid_ratio: float = 7 / 30
    test_ratio: float = 1 / 10
    speed_factors: tuple[float, ...] = ()
    extractors: tuple[str, ...] = ("yin", "acf", "cepstrum")


@dataclass
class BackboneConfig:
    """Speech backbone selection and stub parameters."""

    kind: str = "stub"
    checkpoint: str | None = None
    dim: int = 64
    layers: int = 3
    heads: int = 2
    seed: int = 0
    softmax_weights: bool = True
    identity_layers: bool = False


@dataclass
class MelodyConfig:
    """Extractor head architecture and training schedule."""

    blocks: int = 4
    heads: int = 2
    kernel: int = 9
    ff_dim: int = 512
    dropout: float = 0.1
    feature_dim: int = 256
    lr: float = 2e-5
    weight_decay: float = 0.01
    steps: int = 20000
    batch_size: int = 8
    crop_seconds: float = 3.0
    freeze_step: int = 5000
    grad_clip: float = 1.0
    log_every: int = 100
    loss_pitch: float = 1.0
    loss_energy: float = 0.5
    loss_vuv: float = 0.5
    bgm_prob: float = 0.5
    snr_range: tuple[float, float] = (0.0, 15.0)


@dataclass
class SvcConfig:
    """Conversion model architecture and adversarial training weights."""

    dim: int = 256
    enc_blocks: int = 2
    dec_blocks: int = 4
    heads: int = 2
    kernel: int = 9
    ff_dim: int = 512
    dropout: float = 0.1
    lr: float = 2e-4
    disc_lr: float = 2e-4
    weight_decay: float = 0.01
    steps: int = 20000
    batch_size: int = 4
    crop_frames: int = 192
    adv_rf: float = 1.0
    adv_cv: float = 1.0
    adv_emb: float = 0.1
    melody_input: str = "features"
    content: str = "stub"
    log_every: int = 100


@dataclass
class EvalConfig:
    """Evaluation protocol settings."""

    snr_levels: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0)
    f0corr_space: str = "log"
    vuv_threshold: float = 0.5


@dataclass
class ExperimentConfig:
    """Top-level config: one of these drives every CLI run."""

    seed: int = 17
    condition: str = "proposed"
    workdir: str = "runs"
    data: DataConfig = field(default_factory=DataConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    melody: MelodyConfig = field(default_factory=MelodyConfig)
    svc: SvcConfig = field(default_factory=SvcConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _coerce(value: Any, annotation: Any, where: str) -> Any:
    origin = get_origin(annotation)
    if is_dataclass(annotation):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping, got {type(value).__name__}")
        return _from_dict(annotation, value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a sequence, got {type(value).__name__}")
        args = get_args(annotation)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{where}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(v, a, f"{where}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if annotation is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if annotation is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if annotation is str or annotation == (str | None):
        if value is None and annotation == (str | None):
            return None
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _from_dict(cls, data: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise UnknownKeyError(
            f"{where}: unknown key(s) {sorted(unknown)}; known keys: {sorted(known)}"
        )
    kwargs = {}
    hints = {f.name: f.type for f in fields(cls)}
    resolved = _resolve_hints(cls)
    for name, value in data.items():
        annotation = resolved.get(name, hints[name])
        coerced = _coerce(value, annotation, f"{where}.{name}" if where else name)
        if name in _PATH_FIELDS and isinstance(coerced, str):
            coerced = os.path.expandvars(coerced)
        kwargs[name] = coerced
    return cls(**kwargs)


def _resolve_hints(cls) -> dict:
    import typing

    try:
        return typing.get_type_hints(cls)
    except Exception:
        return {}


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a config from a nested mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    return _from_dict(ExperimentConfig, data, "")


def load_config(path: str | Path) -> ExperimentConfig:
    """Load a YAML config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open() as fh:
            data = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse '{path}': {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg) -> dict:
    """Nested plain-type dict of a config (tuples become lists)."""
    out = dataclasses.asdict(cfg)

    def clean(value):
        if isinstance(value, dict):
            return {k: clean(v) for k, v in value.items()}
        if isinstance(value, tuple):
            return [clean(v) for v in value]
        return value

    return clean(out)


def archive_config(cfg: ExperimentConfig, out_dir: str | Path, name: str = "config.yaml") -> Path:
    """Write the fully resolved config next to a run's outputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    with path.open("w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=True)
    return path

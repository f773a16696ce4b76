"""Training configuration: nested dataclasses loaded from a YAML file.

Unknown keys anywhere in the file are rejected.  Two presets ship:
``default`` (desk-scale: Adam, tanh fusion and a small MAD weight, which
suit the synthetic data) and ``anti_spoofing`` (the SGD schedule and
loss weights used for the face anti-spoofing experiments).
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import DatasetSpec
from .errors import ConfigError


@dataclass
class ModelConfig:
    hidden: int = 32
    feature_dim: int = 16
    fused_dim: int = 32
    teacher_fused_dim: int = 32
    fusion_activation: str = "tanh"


@dataclass
class OptimConfig:
    method: str = "adam"
    lr: float = 3e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    milestones: list[int] = field(default_factory=lambda: [15])
    gamma: float = 0.1
    lr_warmup_epochs: int = 0


@dataclass
class DropoutConfig:
    policy: str = "uniform"
    keep_prob: float = 0.5


@dataclass
class MadConfig:
    mode: str = "mad"
    alpha: float = 0.1
    signed_discrepancy: bool = False
    active_during_warmup: bool = True


@dataclass
class MarConfig:
    mode: str = "mar"
    beta: float = 0.5
    warmup_epochs: int = 5
    subsample_size: int = 512
    literal_softmax_counts: bool = False


@dataclass
class TrainConfig:
    data: DatasetSpec = field(default_factory=lambda: DatasetSpec(samples_per_class=1000))
    modality_names: list[str] | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    dropout: DropoutConfig = field(default_factory=DropoutConfig)
    mad: MadConfig = field(default_factory=MadConfig)
    mar: MarConfig = field(default_factory=MarConfig)
    epochs: int = 20
    teacher_epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    output_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    @property
    def alpha(self):
        return self.mad.alpha

    @property
    def beta(self):
        return self.mar.beta

    @property
    def names(self) -> list[str]:
        return self.modality_names or [f"M{j}" for j in range(self.data.num_modalities)]

    def validate(self):
        if self.mad.alpha < 0:
            raise ConfigError("mad.alpha", "must be >= 0")
        if self.mar.beta < 0:
            raise ConfigError("mar.beta", "must be >= 0")
        if self.mad.mode not in ("mad", "sp", "off"):
            raise ConfigError("mad.mode", f"must be one of mad, sp, off; got {self.mad.mode!r}")
        if self.mar.mode not in ("mar", "sr", "off"):
            raise ConfigError("mar.mode", f"must be one of mar, sr, off; got {self.mar.mode!r}")
        if self.mar.warmup_epochs < 1:
            raise ConfigError("mar.warmup_epochs", "must be >= 1")
        if self.mar.subsample_size < 1:
            raise ConfigError("mar.subsample_size", "must be >= 1")
        if self.epochs <= self.mar.warmup_epochs:
            raise ConfigError("epochs", f"must exceed mar.warmup_epochs ({self.mar.warmup_epochs})")
        if self.teacher_epochs < 1:
            raise ConfigError("teacher_epochs", "must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size", "must be >= 2 for relation distillation")
        if self.optim.method not in ("sgd", "adam"):
            raise ConfigError("optim.method", f"must be sgd or adam; got {self.optim.method!r}")
        if self.optim.lr <= 0:
            raise ConfigError("optim.lr", "must be > 0")
        if self.model.fusion_activation not in ("relu", "tanh"):
            raise ConfigError("model.fusion_activation",
                              f"must be relu or tanh; got {self.model.fusion_activation!r}")
        if self.dropout.policy not in ("uniform", "bernoulli"):
            raise ConfigError("dropout.policy", f"must be uniform or bernoulli; got {self.dropout.policy!r}")
        if not 0.0 < self.dropout.keep_prob <= 1.0:
            raise ConfigError("dropout.keep_prob", "must be in (0, 1]")
        if self.modality_names is not None and len(self.modality_names) != self.data.num_modalities:
            raise ConfigError("modality_names", "length must equal data.num_modalities")


_SECTIONS = {
    "data": DatasetSpec,
    "model": ModelConfig,
    "optim": OptimConfig,
    "dropout": DropoutConfig,
    "mad": MadConfig,
    "mar": MarConfig,
}

PRESETS = {
    "default": {},
    "anti_spoofing": {
        "optim": {
            "method": "sgd",
            "lr": 1e-3,
            "momentum": 0.9,
            "weight_decay": 5e-4,
            "milestones": [16, 33, 50],
            "gamma": 0.1,
            "lr_warmup_epochs": 5,
        },
        "model": {"fusion_activation": "relu"},
        "mad": {"alpha": 30.0},
        "mar": {"beta": 0.5, "warmup_epochs": 5},
        "epochs": 100,
        "teacher_epochs": 100,
        "batch_size": 64,
    },
}


def _build(cls, raw, prefix):
    if not isinstance(raw, dict):
        raise ConfigError(prefix, "expected a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{prefix}.{key}" if prefix else key, "unknown key")
    kwargs = {}
    defaults = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in raw.items():
        if key in _SECTIONS and cls is TrainConfig:
            # a partial section overrides the config's own default, not the bare class default
            base = dataclasses.asdict(defaults[key].default_factory())
            kwargs[key] = _build(_SECTIONS[key], _merge(base, value) if isinstance(value, dict) else value, key)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        if prefix and not exc.field.startswith(prefix):
            raise ConfigError(f"{prefix}.{exc.field}", str(exc).split(": ", 1)[1]) from None
        raise
    except TypeError as exc:
        raise ConfigError(prefix or "config", str(exc)) from None


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def config_from_dict(raw: dict) -> TrainConfig:
    """Build a config; an optional top-level ``preset`` key seeds the values."""
    raw = dict(raw or {})
    preset = raw.pop("preset", "default")
    if preset not in PRESETS:
        raise ConfigError("preset", f"unknown preset {preset!r}")
    return _build(TrainConfig, _merge(PRESETS[preset], raw), "")


def load_config(path) -> TrainConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from None
    return config_from_dict(raw or {})


def config_to_dict(cfg: TrainConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["data"]["snr_per_modality"] = list(d["data"]["snr_per_modality"])
    return d


def dump_config(cfg: TrainConfig, path):
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))

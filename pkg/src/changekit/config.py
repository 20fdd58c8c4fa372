"""Run configuration: dataclasses, YAML documents, and profiles.

A config file holds up to three sections (pretrain, finetune, augment) whose
keys map one-to-one onto the dataclass fields below. Unknown sections or
keys are errors: a typo should fail the run, not silently fall back to a
default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .augment import AugmentConfig


class ConfigError(ValueError):
    pass


@dataclass
class PretrainConfig:
    epochs: int = 400
    batch_size: int = 16
    base_lr: float = 0.003          # scaled by batch_size / 256 at use
    weight_decay: float = 1e-6
    momentum: float = 0.9
    trust_coeff: float = 0.001
    alpha: float = 100.0
    beta: float = 3000.0
    lam: float = 0.005
    use_differencing: bool = True
    use_ip: bool = True
    use_cr: bool = True
    # cosine-normalize Gram rows inside the consistency term; raw feature
    # dot products scale quadratically with feature size and would drown the
    # other objectives at small widths
    cr_normalize_rows: bool = True
    image_size: int = 256
    encoder_widths: tuple = (16, 32, 64)
    encoder_kernel: int = 3
    encoder_downsample: int = 2
    projector_hidden: int = 512
    projector_out: int = 256

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2; the correlation matrix needs a batch")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")

    @property
    def effective_lr(self) -> float:
        return self.base_lr * self.batch_size / 256.0


@dataclass
class FinetuneConfig:
    epochs: int = 150
    batch_size: int = 8
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    label_fraction: float = 1.0
    pos_weight: float = 1.0
    head_mode: str = "diff"
    init: str = "random"  # random | dsp_checkpoint | ssl_nodiff_checkpoint

    def __post_init__(self):
        if not 0.0 < self.label_fraction <= 1.0:
            raise ConfigError(f"label_fraction must be in (0, 1], got {self.label_fraction}")
        if self.init not in ("random", "dsp_checkpoint", "ssl_nodiff_checkpoint"):
            raise ConfigError(f"unknown init mode {self.init!r}")


@dataclass
class RunConfig:
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)


def desk_profile() -> RunConfig:
    """Small everything: 32x32 images and short schedules for CPU-only runs.

    The learning rate and trust coefficient are retuned for the short step
    budget; at the long-schedule defaults the layer-adaptive updates are too
    small to move the weights in a few hundred steps.
    """
    return RunConfig(
        pretrain=PretrainConfig(
            epochs=50, image_size=32,
            base_lr=0.2, trust_coeff=0.02,
            encoder_widths=(8, 16, 32),
            projector_hidden=128, projector_out=64,
        ),
        finetune=FinetuneConfig(epochs=50),
        augment=AugmentConfig(size=32),
    )


def paper_profile() -> RunConfig:
    return RunConfig(
        pretrain=PretrainConfig(),
        finetune=FinetuneConfig(),
        augment=AugmentConfig(size=256),
    )


PROFILES = {"desk": desk_profile, "paper": paper_profile}


def _coerce(value, target):
    if isinstance(target, tuple) and isinstance(value, list):
        return tuple(value)
    return value


def _update_dataclass(obj, section: str, overrides: dict):
    fields = {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}
    unknown = set(overrides) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    merged = dict(fields)
    for key, value in overrides.items():
        merged[key] = _coerce(value, fields[key])
    return type(obj)(**merged)


def load_config(path: str | Path, profile: str = "desk") -> RunConfig:
    """Profile defaults overridden by the YAML document at ``path``."""
    doc = yaml.safe_load(Path(path).read_text())
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping of sections")
    return config_from_dict(doc, profile=profile, source=str(path))


def config_from_dict(doc: dict, profile: str = "desk", source: str = "<dict>") -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = PROFILES[profile]()
    unknown = set(doc) - {"pretrain", "finetune", "augment"}
    if unknown:
        raise ConfigError(f"{source}: unknown sections {sorted(unknown)}")
    try:
        if "pretrain" in doc:
            cfg.pretrain = _update_dataclass(cfg.pretrain, "pretrain", doc["pretrain"] or {})
        if "finetune" in doc:
            cfg.finetune = _update_dataclass(cfg.finetune, "finetune", doc["finetune"] or {})
        if "augment" in doc:
            cfg.augment = _update_dataclass(cfg.augment, "augment", doc["augment"] or {})
    except ConfigError:
        raise
    except TypeError as err:
        raise ConfigError(f"{source}: {err}") from None
    return cfg


def dump_config(cfg: RunConfig) -> str:
    doc = {
        "pretrain": dataclasses.asdict(cfg.pretrain),
        "finetune": dataclasses.asdict(cfg.finetune),
        "augment": dataclasses.asdict(cfg.augment),
    }
    for section in doc.values():
        for key, value in section.items():
            if isinstance(value, tuple):
                section[key] = list(value)
    return yaml.safe_dump(doc, sort_keys=True)

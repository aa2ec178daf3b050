"""The run configuration: one JSON document with defaults for every module.

Sections: train, mask, model, loss, teacher, data. Omitted fields take the
defaults below; every field is validated (including cross-section
consistency) before any command does work.
"""

import json
import math
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError, DataError
from .losses import LossConfig
from .masking import MaskSpec
from .model import ModelConfig
from .teacher import TeacherSpec
from .trainer import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    norm_mean: object = 0.5  # scalar or per-channel list
    norm_std: object = 0.5

    def validate(self):
        for name, v in (("norm_mean", self.norm_mean), ("norm_std", self.norm_std)):
            vals = v if isinstance(v, (list, tuple)) else [v]
            if not all(isinstance(x, (int, float)) for x in vals):
                raise ConfigError(f"data.{name} must be a number or list of numbers")
        stds = self.norm_std if isinstance(self.norm_std, (list, tuple)) else [self.norm_std]
        if any(s == 0 for s in stds):
            raise ConfigError("data.norm_std must be nonzero")


def _default_mask():
    return MaskSpec(image_side=32, patch_side=8, block_side=16, mask_ratio=0.6, seed=0)


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    mask: MaskSpec = field(default_factory=_default_mask)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    teacher: TeacherSpec = field(default_factory=TeacherSpec)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self):
        self.train.validate()
        self.mask.validate()
        self.model.validate()
        self.loss.validate()
        self.teacher.validate()
        self.data.validate()
        if self.model.patch_side != self.mask.patch_side:
            raise ConfigError(
                f"model.patch_side {self.model.patch_side} != mask.patch_side "
                f"{self.mask.patch_side}")
        if self.teacher.kind == "procedural-conv":
            if self.teacher.target_dim != self.model.target_dim:
                raise ConfigError(
                    f"teacher.target_dim {self.teacher.target_dim} != "
                    f"model.target_dim {self.model.target_dim}")
            if self.teacher.downsample_rate % self.model.patch_side != 0:
                raise ConfigError(
                    f"teacher.downsample_rate {self.teacher.downsample_rate} not "
                    f"divisible by patch_side {self.model.patch_side}: grids cannot align")
        n_masked_blocks = math.floor(self.mask.mask_ratio * self.mask.n_blocks + 0.5)
        if n_masked_blocks < 1:
            raise ConfigError(
                f"mask_ratio {self.mask.mask_ratio} rounds to zero masked blocks "
                f"of {self.mask.n_blocks}; the patch loss needs at least one")
        if n_masked_blocks >= self.mask.n_blocks:
            raise ConfigError(
                f"mask_ratio {self.mask.mask_ratio} rounds to all "
                f"{self.mask.n_blocks} blocks masked")
        return self

    def to_dict(self):
        return asdict(self)


def _build_section(name, default, payload):
    if not isinstance(payload, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(default)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown field(s) in section {name!r}: {sorted(unknown)}")
    merged = {**asdict(default), **payload}
    try:
        return type(default)(**merged)
    except TypeError as e:
        raise ConfigError(f"bad value in section {name!r}: {e}") from None


def run_config_from_dict(doc):
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    base = RunConfig()
    sections = {f.name: getattr(base, f.name) for f in fields(base)}
    unknown = set(doc) - set(sections)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    kwargs = {name: _build_section(name, default, doc[name])
              for name, default in sections.items() if name in doc}
    return RunConfig(**kwargs)


def load_run_config(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as e:
        raise DataError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    return run_config_from_dict(doc)


def save_run_config(cfg: RunConfig, path):
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=1, sort_keys=True)

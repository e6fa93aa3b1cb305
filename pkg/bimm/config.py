"""
config.py - High-level API for run configurations.

A configuration is a nested JSON/YAML document described by the packaged
``config_schema.json``.  :meth:`Config.load` parses it, fills in schema
defaults, validates it and builds the frozen settings objects every stage
reads (``ClipSpec``, ``EncoderConfig``, ``TrainConfig`` ...).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from . import loader, parser, utils, validator
from .data import DATASET_KINDS, DatasetSpec
from .errors import ConfigError
from .gradcheck import GradcheckConfig
from .model import EncoderConfig
from .patching import ClipSpec, MaskConfig
from .targets import ContourConfig, GaborBankConfig, TargetConfig
from .training import TARGET_SUBSETS, FinetuneConfig, ScheduleConfig, TrainConfig

__all__ = ["Config", "DataConfig", "OutputConfig", "SCHEMA_NAME", "load_config_schema"]

SCHEMA_NAME = "config_schema.json"

# Offsets added to the master seed so stages never share a random stream.
_SEED_OFFSETS = {
    "pretrain_ventral": 0,
    "pretrain_joint": 1,
    "finetune": 2,
    "gradcheck": 3,
    "images": 10,
    "videos": 11,
    "finetune_data": 12,
}
_DATASET_ROLES = ("images", "videos", "finetune_data")


def load_config_schema() -> dict:
    """The packaged config schema, checked against the meta-schema."""
    schema = loader.load_schema(SCHEMA_NAME)
    try:
        validator.validate(schema, schema=loader.load_schema("schema_meta.json"))
    except validator.SchemaError as exc:
        raise ConfigError(f"Schema '{SCHEMA_NAME}' does not satisfy schema_meta.json: {exc}") from exc
    return schema


@dataclass(frozen=True)
class DataConfig:
    image_size: int = 2000
    video_size: int = 400
    video_source: str = "synthetic_motion"
    frames_dir: str | None = None
    finetune_kind: str = "synthetic_motion"
    finetune_size: int = 400
    train_size: int = 320

    def __post_init__(self) -> None:
        if not 0 < self.train_size < self.finetune_size:
            raise ConfigError(f"train_size {self.train_size} must lie strictly between 0 and finetune_size {self.finetune_size}")
        if self.video_source == "frames_dir" and not self.frames_dir:
            raise ConfigError("video_source 'frames_dir' needs data.frames_dir")
        for kind in (self.video_source, self.finetune_kind):
            if kind not in DATASET_KINDS:
                raise ConfigError(f"unknown dataset kind '{kind}'")


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs"
    log_level: str = "INFO"
    log_every: int = 50
    log_wall_time: bool = False
    reconstruct_samples: int = 4


class Config:
    """A validated run configuration and the settings objects built from it."""

    def __init__(self, raw: Mapping[str, Any], schema: Mapping[str, Any] | None = None):
        """Build from a document that already carries defaults and passed validation."""
        self.schema = dict(schema) if schema is not None else load_config_schema()
        self._raw = copy.deepcopy(dict(raw))
        r = self._raw

        self.seed: int = r["seed"]
        self.clip = ClipSpec(**r["geometry"])
        model = dict(r["model"])
        model["separation"] = tuple(model["separation"])
        self.encoder = EncoderConfig(**model)
        self.mask = MaskConfig(**r["mask"])
        self.targets = _targets(r["targets"])
        self.pretrain_ventral = _train(r["pretrain_ventral"], self.mask, self.targets, self.seed + _SEED_OFFSETS["pretrain_ventral"])
        self.pretrain_joint = _train(r["pretrain_joint"], self.mask, self.targets, self.seed + _SEED_OFFSETS["pretrain_joint"])
        self.finetune = _finetune(r["finetune"], self.seed + _SEED_OFFSETS["finetune"])
        self.gradcheck = GradcheckConfig(**r["gradcheck"], seed=self.seed + _SEED_OFFSETS["gradcheck"])
        self.data = DataConfig(**r["data"])
        self.output = OutputConfig(**r["output"])

        self.pretrain_ventral.check_encoder(self.encoder)
        self.pretrain_joint.check_encoder(self.encoder)
        wanted = "ventral" if self.data.finetune_kind == "synthetic_shapes" else "dorsal"
        if self.finetune.branch != wanted:
            raise ConfigError(f"finetune data '{self.data.finetune_kind}' is read by the {wanted} branch, not {self.finetune.branch}")

    # ------------------------------------------------------------------ #
    # Construction                                                       #
    # ------------------------------------------------------------------ #

    @classmethod
    def load(cls, source: Any = None) -> "Config":
        """Parse *source*, inject defaults, validate and build.

        *source* is anything :func:`bimm.parser.parse_input` accepts: a
        mapping, a JSON/YAML file path, a literal, or CLI tokens.
        """
        schema = load_config_schema()
        if source is None:  # keep the test runner's argv out of it
            source = {}
        raw = parser.parse_input(source, schema=schema)
        raw = validator.inject_defaults(raw, schema=schema)
        validator.validate(raw, schema=schema)
        return cls(raw, schema)

    @classmethod
    def preset(cls, name: str) -> "Config":
        """A bundled configuration (``toy``, ``desk``)."""
        return cls.load(loader.load_preset(name))

    def override(self, dotted: str, value: Any) -> "Config":
        """A new config with ``section.field`` set to *value*."""
        return self.overrides({dotted: value})

    def overrides(self, values: Mapping[str, Any]) -> "Config":
        raw = copy.deepcopy(self._raw)
        for dotted, value in values.items():
            node = raw
            *parents, leaf = dotted.split(".")
            for part in parents:
                if not isinstance(node.get(part), dict):
                    raise ConfigError(f"unknown config section '{dotted}'")
                node = node[part]
            if leaf not in node:
                raise ConfigError(f"unknown config key '{dotted}'")
            node[leaf] = value
        validator.validate(raw, schema=self.schema)
        return type(self)(raw, self.schema)

    # ------------------------------------------------------------------ #
    # Views                                                              #
    # ------------------------------------------------------------------ #

    def to_dict(self) -> dict[str, Any]:
        return copy.deepcopy(self._raw)

    @property
    def hash(self) -> str:
        return utils._hash(self._raw)

    @property
    def out_dir(self) -> Path:
        return Path(self.output.dir)

    def dataset_spec(self, role: str) -> DatasetSpec:
        """Dataset for ``images`` (stage one), ``videos`` (stage two) or ``finetune_data``."""
        if role not in _DATASET_ROLES:
            raise ConfigError(f"unknown dataset role '{role}', expected one of {_DATASET_ROLES}")
        seed = self.seed + _SEED_OFFSETS[role]
        d = self.data
        if role == "images":
            return DatasetSpec("synthetic_shapes", d.image_size, self.clip, seed=seed)
        if role == "videos":
            return DatasetSpec(d.video_source, d.video_size, self.clip, seed=seed, path=d.frames_dir)
        return DatasetSpec(d.finetune_kind, d.finetune_size, self.clip, seed=seed)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Config) and self._raw == other._raw

    def __repr__(self) -> str:
        return f"Config(seed={self.seed}, depth={self.encoder.depth}, d_model={self.encoder.d_model}, hash={self.hash[:12]})"


# --------------------------------------------------------------------------- #
# Section builders                                                            #
# --------------------------------------------------------------------------- #

def _targets(section: Mapping[str, Any]) -> TargetConfig:
    g = dict(section["gabor"])
    orientations = tuple(math.radians(a) for a in g.pop("orientations_deg"))
    bank = GaborBankConfig(orientations=orientations, wavelengths=tuple(g.pop("wavelengths")), **g)
    return TargetConfig(
        gabor=bank,
        contour=ContourConfig(**section["contour"]),
        normalize=dict(section["normalize"]),
        loss_on=section["loss_on"],
    )


_SCHEDULE_KEYS = ("base_lr", "min_lr", "warmup_steps", "total_steps", "batch_size", "lr_scale_batch")


def _schedule(section: Mapping[str, Any]) -> ScheduleConfig:
    return ScheduleConfig(**{k: section[k] for k in _SCHEDULE_KEYS})


def _train(section: Mapping[str, Any], mask: MaskConfig, targets: TargetConfig, seed: int) -> TrainConfig:
    s = {k: v for k, v in section.items() if k not in _SCHEDULE_KEYS}
    s.setdefault("sharing", "none")
    subset = s.pop("target_subset", None)
    if subset is not None:
        s["tap_weights"] = TARGET_SUBSETS[subset]
    s["tap_weights"] = tuple(s["tap_weights"])
    return TrainConfig(schedule=_schedule(section), mask=mask, loss_on=targets.loss_on, seed=seed, **s)


def _finetune(section: Mapping[str, Any], seed: int) -> FinetuneConfig:
    s = {k: v for k, v in section.items() if k not in _SCHEDULE_KEYS}
    return FinetuneConfig(schedule=_schedule(section), seed=seed, **s)

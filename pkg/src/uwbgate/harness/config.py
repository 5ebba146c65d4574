"""Experiment configuration: a YAML file checked against ``config.schema.json``."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Any, Mapping

import jsonschema
import yaml

from ..channel import RangeErrorModel
from ..gate import DEFAULT_POSE_OFFSETS_CM, OpenPolicy
from ..neural import AdamConfig, TrainConfig
from ..scenario import DEFAULT_LAYOUT, LayoutError, WorldLayout, build_layout
from ..types import Pose

FULL_SCALE_CIRS_PER_POSE = 12_500  # 50,000 CIRs over four poses


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Intervals:
    dl_tdoa_ms: float = 500.0
    ds_twr_ms: float = 200.0


@dataclass(frozen=True)
class NoiseConfig:
    los_bias_cm: float = 0.0
    los_sigma_cm: float = 4.0
    nlos_bias_cm: float = 47.0
    nlos_sigma_cm: float = 26.0
    sync_sigma_ns: float = 0.1

    def error_model(self) -> RangeErrorModel:
        return RangeErrorModel(self.los_bias_cm, self.los_sigma_cm, self.nlos_bias_cm, self.nlos_sigma_cm)


@dataclass(frozen=True)
class TrainingConfig:
    n_per_pose: int
    max_epochs: int
    batch_size: int
    learning_rate: float = 1e-3
    early_stop_loss: float | None = 0.02
    block_len: int = 100  # frames per constant-condition block in evaluation streams

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.batch_size, self.max_epochs, seed, AdamConfig(learning_rate=self.learning_rate),
                           self.early_stop_loss)


@dataclass(frozen=True)
class OutlierConfig:
    buffer_size: int = 10
    threshold_cm: float = 50.0
    interval_scale: float = 2.0


@dataclass(frozen=True)
class LocalizationConfig:
    standing_point: tuple[float, float] = (6.5, 8.0)
    start_distance_m: float = 3.0
    dwell_rounds: int = 10
    nlos_anchor: int = 5  # the responder behind a user walking toward the gates


@dataclass(frozen=True)
class GateConfig:
    base_open_distance_cm: float = 100.0
    pose_offsets_cm: Mapping[str, float] = field(
        default_factory=lambda: {p.value: v for p, v in DEFAULT_POSE_OFFSETS_CM.items()})
    timeout_ms: float = 3000.0
    walkins: int = 200

    def policy(self) -> OpenPolicy:
        return OpenPolicy(self.base_open_distance_cm, {Pose(k): float(v) for k, v in self.pose_offsets_cm.items()})


@dataclass(frozen=True)
class TransitionConfig:
    trials: int = 20
    settle_updates: int = 20
    max_updates: int = 50


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    iterations: int = 100
    full_scale: bool = False
    workers: int = 1
    intervals: Intervals = Intervals()
    layout: Mapping[str, Any] = field(default_factory=lambda: copy.deepcopy(DEFAULT_LAYOUT))
    noise: NoiseConfig = NoiseConfig()
    classifier: TrainingConfig = TrainingConfig(2000, 20, 50)
    pose: TrainingConfig = TrainingConfig(6600, 100, 100)
    lpf_weight: float = 0.8
    outlier: OutlierConfig = OutlierConfig()
    localization: LocalizationConfig = LocalizationConfig()
    gate: GateConfig = GateConfig()
    transition: TransitionConfig = TransitionConfig()

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.intervals.dl_tdoa_ms <= 0 or self.intervals.ds_twr_ms <= 0:
            raise ConfigError("ranging intervals must be positive")

    def world(self) -> WorldLayout:
        try:
            return build_layout(self.layout)
        except LayoutError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def cirs_per_pose(self) -> int:
        return FULL_SCALE_CIRS_PER_POSE if self.full_scale else self.classifier.n_per_pose

    def to_dict(self) -> dict:
        d = asdict(self)
        asa = {"lpf_weight": d.pop("lpf_weight")}
        d["asa"] = asa
        d["localization"]["standing_point"] = list(d["localization"]["standing_point"])
        d["gate"]["pose_offsets_cm"] = dict(d["gate"]["pose_offsets_cm"])
        return d


def _schema() -> dict:
    return json.loads(resources.files("uwbgate.harness").joinpath("config.schema.json").read_text())


def config_from_dict(raw: Mapping[str, Any] | None) -> ExperimentConfig:
    raw = dict(raw or {})
    try:
        jsonschema.validate(raw, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None

    base = ExperimentConfig()

    def section(default, key):
        return replace(default, **raw[key]) if key in raw else default

    loc = section(base.localization, "localization")
    loc = replace(loc, standing_point=tuple(loc.standing_point))
    gate = section(base.gate, "gate")
    gate = replace(gate, pose_offsets_cm={**base.gate.pose_offsets_cm, **gate.pose_offsets_cm})
    try:
        cfg = ExperimentConfig(
            seed=raw.get("seed", base.seed),
            iterations=raw.get("iterations", base.iterations),
            full_scale=raw.get("full_scale", base.full_scale),
            workers=raw.get("workers", base.workers),
            intervals=section(base.intervals, "intervals"),
            layout=raw["layout"] if raw.get("layout") is not None else base.layout,
            noise=section(base.noise, "noise"),
            classifier=section(base.classifier, "classifier"),
            pose=section(base.pose, "pose"),
            lpf_weight=raw.get("asa", {}).get("lpf_weight", base.lpf_weight),
            outlier=section(base.outlier, "outlier"),
            localization=loc,
            gate=gate,
            transition=section(base.transition, "transition"),
        )
        layout = cfg.world()
        cfg.noise.error_model()
        gate.policy()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.localization.nlos_anchor not in layout.anchor_ids or cfg.localization.nlos_anchor == layout.initiator.id:
        raise ConfigError(f"nlos_anchor {cfg.localization.nlos_anchor} must be a responder of the layout")
    if not layout.in_area(cfg.localization.standing_point):
        raise ConfigError("standing_point lies outside the area")
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level")
    return config_from_dict(raw)

"""Run configuration: nested dataclasses loaded from JSON with ``key=value`` overrides."""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .losses import LossWeights
from .model import ModelConfig
from .ttb import TEMPORAL_MODES


@dataclass
class OptimizerConfig:
    lr: float = 5e-5
    weight_decay: float = 0.01


@dataclass
class ScheduleConfig:
    steps: int = 500
    batch_clips: int = 2
    frames_per_clip: int = 5
    clip_stride: int = 1
    eval_every: int = 0
    log_every: int = 25


@dataclass
class LossConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    enable_sem: bool = True
    enable_edge: bool = True
    enable_mask: bool = True
    erosion_kernel: int = 3
    edge_target: str = "hard"


@dataclass
class DataConfig:
    split: str = "train"
    eval_split: str = "train"
    frame_glob: str = "*"
    flip_p: float = 0.5
    synthesize_if_missing: bool = True
    synth_videos: int = 4
    synth_frames: int = 8
    synth_seed: int = 0
    bundle_dir: str | None = None
    text_tokens: int = 6
    image_patches: int = 16


@dataclass
class EvalConfig:
    threshold: float = 0.5
    beta_sq: float = 0.3
    aggregation: str = "per_frame"


@dataclass
class PathsConfig:
    data: str = "runs/synthetic"
    out: str = "runs/default"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    temporal_mode: str = "tokenized"
    seed: int = 0

    def validate(self) -> None:
        if not self.optimizer.lr >= 0:
            raise ValueError("optimizer.lr must be >= 0")
        if self.schedule.frames_per_clip < 1 or self.schedule.batch_clips < 1:
            raise ValueError("frames_per_clip and batch_clips must be >= 1")
        if self.schedule.steps < 0:
            raise ValueError("schedule.steps must be >= 0")
        if self.temporal_mode not in TEMPORAL_MODES:
            raise ValueError(f"temporal_mode must be one of {TEMPORAL_MODES}, got {self.temporal_mode!r}")
        if self.losses.edge_target not in ("hard", "soft"):
            raise ValueError("losses.edge_target must be 'hard' or 'soft'")
        if self.eval.aggregation not in ("per_frame", "per_video"):
            raise ValueError("eval.aggregation must be 'per_frame' or 'per_video'")
        self.model_config().validate()

    def model_config(self) -> ModelConfig:
        return dataclasses.replace(self.model, temporal_mode=self.temporal_mode)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data):
    if not dataclasses.is_dataclass(cls) or not isinstance(data, dict):
        return data
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**{k: _build(hints[k], v) for k, v in data.items()})


def from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data)
    cfg.validate()
    return cfg


def parse_override(item: str) -> tuple[list[str], object]:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ValueError(f"override {item!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def apply_overrides(data: dict, overrides) -> dict:
    data = json.loads(json.dumps(data))
    for item in overrides or ():
        keys, value = parse_override(item)
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ValueError(f"override {item!r} descends into a non-object")
        node[keys[-1]] = value
    return data


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults, updated by the JSON file at ``path`` (if any), then by overrides."""
    base = RunConfig().to_dict()
    if path is not None:
        base = _merge(base, json.loads(Path(path).read_text()))
    return from_dict(apply_overrides(base, overrides))


def _merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for k, v in update.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out

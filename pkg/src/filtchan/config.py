"""Run configuration: JSON file with strict keys, recipe defaults built in.

Defaults reproduce the standard training recipe: 60x120 model window,
stride 6, schedule 32/512/1024/2048/4096 with 10 000 negatives per round,
depth-2 trees, discrete Adaboost, Checkerboards 4x4 bank at 6-px cells.
Unknown keys anywhere in the file are rejected with the offending key named.
Command-line flags override file values; the resolved configuration is echoed
into every output artifact header.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


@dataclass
class ChannelsConfig:
    pre_smooth: str = "off"  # "off" | "triangle1"


@dataclass
class FilterbankConfig:
    family: str = "checkerboards"
    max_rows: int = 4
    max_cols: int = 4
    n_filters: int = 50  # random family
    n_sizes: int = 16  # squares family
    cell_px: int = 6
    pca_k: int = 4
    pca_patches: int = 1200  # patches per channel (and per split)
    bank_path: str | None = None  # pre-built bank (informed family)


@dataclass
class TrainingConfig:
    schedule: list[int] = field(default_factory=lambda: [32, 512, 1024, 2048, 4096])
    depth: int = 2
    variant: str = "discrete"  # "discrete" | "real"
    initial_negatives: int = 10_000
    negatives_per_round: int = 10_000
    mirror: bool = True
    mining_score_min: float = 0.0
    exclusion_iou: float = 0.1


@dataclass
class DetectorConfig:
    window: list[int] = field(default_factory=lambda: [60, 120])
    stride: int = 6
    scales_per_octave: int = 8
    min_height: float = 50.0
    max_height: float = 400.0
    score_min: float = 0.0
    nms_overlap: float = 0.65
    object_frac: list[float] = field(default_factory=lambda: [0.5, 1.0])


@dataclass
class EvalConfig:
    protocol: str = "caltech-mr"  # "caltech-mr" | "kitti-ap"
    subset: str = "reasonable"  # "reasonable" | "moderate" | "custom" | "none"
    iou_min: float = 0.5
    recall_points: int = 41
    min_height: float | None = None  # custom subset overrides
    max_occlusion: float | None = None


@dataclass
class SynthConfig:
    n_images: int = 100
    image_size: list[int] = field(default_factory=lambda: [320, 240])
    targets_per_image: list[int] = field(default_factory=lambda: [1, 3])
    height_range: list[float] = field(default_factory=lambda: [72.0, 120.0])
    distractors_per_image: list[int] = field(default_factory=lambda: [6, 12])
    occlusion_prob: float = 0.1
    noise_sigma: float = 0.04
    corpus_id: str = "synth"


@dataclass
class DataConfig:
    train_manifest: str | None = None
    test_manifest: str | None = None
    subsample: int | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)


@dataclass
class RunConfig:
    channels: ChannelsConfig = field(default_factory=ChannelsConfig)
    filterbank: FilterbankConfig = field(default_factory=FilterbankConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def echo(self) -> str:
        """Compact deterministic JSON for artifact provenance headers."""
        return "config " + json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _fill(obj, values: dict, prefix: str):
    fields = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in values.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {prefix}{key}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {prefix}{key} must be an object")
            _fill(current, value, prefix=f"{prefix}{key}.")
        else:
            setattr(obj, key, value)
    return obj


def load_config(path: str | os.PathLike | None) -> RunConfig:
    """RunConfig from a JSON file; None gives pure defaults."""
    cfg = RunConfig()
    if path is None:
        return cfg
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    _fill(cfg, raw, prefix="")
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if cfg.channels.pre_smooth not in ("off", "triangle1"):
        raise ConfigError(f"channels.pre_smooth: bad value {cfg.channels.pre_smooth!r}")
    if cfg.training.variant not in ("discrete", "real"):
        raise ConfigError(f"training.variant: bad value {cfg.training.variant!r}")
    if cfg.training.depth not in (1, 2, 3, 4, 5):
        raise ConfigError(f"training.depth: bad value {cfg.training.depth}")
    if not cfg.training.schedule or any(
            b <= a for a, b in zip(cfg.training.schedule, cfg.training.schedule[1:])):
        raise ConfigError("training.schedule: must be non-empty and strictly increasing")
    if cfg.eval.protocol not in ("caltech-mr", "kitti-ap"):
        raise ConfigError(f"eval.protocol: bad value {cfg.eval.protocol!r}")
    if cfg.eval.subset not in ("reasonable", "moderate", "custom", "none"):
        raise ConfigError(f"eval.subset: bad value {cfg.eval.subset!r}")
    if len(cfg.detector.window) != 2 or min(cfg.detector.window) < 6:
        raise ConfigError("detector.window: expected [width, height] in pixels")
    if cfg.detector.stride < 1:
        raise ConfigError("detector.stride: must be >= 1")

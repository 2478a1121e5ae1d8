"""Run configuration: strict JSON schema, defaults, presets.

Unknown keys anywhere in the document are rejected. ``KRAST_SEED`` in the
environment overrides the configured seed. The fully resolved config is
written next to every artifact so any run can be reproduced from it.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import List, Optional

from .encoders import EncoderConfig
from .errors import ConfigError
from .model import STRATEGIES
from .training import FocalConfig, TrainConfig
from .video_prompts import VideoPromptConfig

SEED_ENV = "KRAST_SEED"


@dataclass
class DataSection:
    train_manifest: Optional[str] = None
    val_manifest: Optional[str] = None
    raw_manifest: Optional[str] = None
    corpus: Optional[str] = None


@dataclass
class RunConfig:
    seed: int = 0
    strategy: str = "segkpt-shd"
    frames: int = 32
    split: str = "etri"
    text_encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(seed=11))
    vision_encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(seed=12))
    video_prompts: VideoPromptConfig = field(default_factory=VideoPromptConfig)
    focal: FocalConfig = field(default_factory=FocalConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSection = field(default_factory=DataSection)
    ablate_frames: List[int] = field(default_factory=lambda: [8, 16, 32])

    def validate(self) -> "RunConfig":
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")
        if self.split != "etri":
            raise ConfigError(f"unknown split protocol {self.split!r}")
        if self.text_encoder.d_model != self.vision_encoder.d_model:
            raise ConfigError("text and vision encoders must share d_model")
        if any(k < 1 for k in self.ablate_frames):
            raise ConfigError("ablate_frames entries must be >= 1")
        return self

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)


_SECTION_TYPES = {
    "text_encoder": EncoderConfig,
    "vision_encoder": EncoderConfig,
    "video_prompts": VideoPromptConfig,
    "focal": FocalConfig,
    "train": TrainConfig,
    "data": DataSection,
}


def _build_section(cls, obj: dict, where: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(obj) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**obj)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad {where}: {e}")


def config_from_dict(obj: dict) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("run config must be a JSON object")
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(obj) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in obj.items():
        if key in _SECTION_TYPES:
            kwargs[key] = _build_section(_SECTION_TYPES[key], value, key)
        else:
            kwargs[key] = value
    try:
        cfg = RunConfig(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad run config: {e}")
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env_seed!r}")
    return cfg.validate()


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as f:
            obj = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})")
    return config_from_dict(obj)


def desk_preset(**overrides) -> RunConfig:
    """Small fast configuration for laptop-scale experiments."""
    cfg = RunConfig(
        frames=8,
        text_encoder=EncoderConfig(d_model=64, n_layers=4, n_heads=4, seed=11),
        vision_encoder=EncoderConfig(d_model=64, n_layers=4, n_heads=4,
                                     patch_size=56, frame_size=224, seed=12),
        train=TrainConfig(epochs=40, batch_size=8, max_steps=500,
                          eval_every=25, early_stop_top1=0.98),
    )
    for key, value in overrides.items():
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown preset override {key!r}")
        setattr(cfg, key, value)
    return cfg.validate()


def paper_shape_preset(**overrides) -> RunConfig:
    """Configuration mirroring the reference protocol shape (12-layer tower,
    32-patch tokens, 32 frames); slow, for structural fidelity runs."""
    cfg = RunConfig(
        frames=32,
        text_encoder=EncoderConfig(d_model=64, n_layers=4, n_heads=4, seed=11),
        vision_encoder=EncoderConfig(d_model=64, n_layers=12, n_heads=4,
                                     patch_size=32, frame_size=224, seed=12),
        video_prompts=VideoPromptConfig(n_layers=12),
    )
    for key, value in overrides.items():
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown preset override {key!r}")
        setattr(cfg, key, value)
    return cfg.validate()

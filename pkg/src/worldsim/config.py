"""Pipeline configuration: strict JSON parsing with per-stage sections.

Unknown keys are rejected by name; defaults encode the training recipes
scaled down to desk size. The fully resolved config is echoed next to the
outputs so a run can be reproduced from its artifacts.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import FORMAT_VERSION
from .synthworld import WorldConfig

OUTPUT_ENV_VAR = "WORLDSIM_OUT"


class ConfigError(ValueError):
    """Configuration parse or validation failure, naming the offending key."""


def _strict(cls, payload: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in section {where!r}")
    try:
        obj = cls(**payload)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {where!r}: {exc}") from exc
    return obj


@dataclass(frozen=True)
class DataSection:
    frame_height: int = 32
    frame_width: int = 64
    episode_length: int = 100
    base_rate: float = 25.0
    num_agents: int = 3
    weather: tuple = ("sun", "rain", "fog")
    lights: tuple = ("day", "dusk", "night")
    curvature_min: float = -0.02
    curvature_max: float = 0.02
    speed_min: float = 2.0
    speed_max: float = 14.0
    train_episodes: int = 24
    val_episodes: int = 6
    balance: bool = False
    balance_exponent: float = 0.5

    def world_config(self, seed: int, downsample: int) -> WorldConfig:
        return WorldConfig(
            frame_height=self.frame_height,
            frame_width=self.frame_width,
            episode_length=self.episode_length,
            base_rate=self.base_rate,
            num_agents=self.num_agents,
            weather_set=tuple(self.weather),
            light_set=tuple(self.lights),
            road_curvature_range=(self.curvature_min, self.curvature_max),
            speed_range=(self.speed_min, self.speed_max),
            seed=seed,
            downsample_divisor=downsample,
        )


@dataclass(frozen=True)
class TokenizerSection:
    downsample: int = 4
    vocab_size: int = 64
    code_dim: int = 16
    base_channels: int = 32
    weight_l1: float = 0.2
    weight_l2: float = 2.0
    weight_perceptual: float = 0.1
    weight_gan: float = 0.0
    weight_codebook: float = 1.0
    weight_distill: float = 0.1
    train_steps: int = 400
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.5
    beta2: float = 0.9

    def __post_init__(self):
        for name in ("weight_l1", "weight_l2", "weight_perceptual",
                     "weight_gan", "weight_codebook", "weight_distill"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class WorldModelSection:
    steps: int = 6             # context window in time steps (T)
    text_slots: int = 4
    action_slots: int = 2
    width: int = 128
    layers: int = 4
    heads: int = 4
    subsample: int = 4         # temporal subsampling from the base rate
    ratio_unconditioned: float = 0.2
    ratio_action: float = 0.4
    ratio_text: float = 0.4
    train_steps: int = 400
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.95
    grad_clip: float = 1.0

    def __post_init__(self):
        total = self.ratio_unconditioned + self.ratio_action + self.ratio_text
        if abs(total - 1.0) > 1e-6:
            raise ValueError(
                "ratio_unconditioned + ratio_action + ratio_text must sum to 1, "
                f"got {total}"
            )

    @property
    def conditioning_ratios(self) -> tuple[float, float, float]:
        return (self.ratio_unconditioned, self.ratio_action, self.ratio_text)


@dataclass(frozen=True)
class DecoderSection:
    frames: int = 3
    base_channels: int = 32
    token_channels: int = 16
    ddim_steps: int = 20
    token_dropout: float = 0.15
    mix_probability: float = 0.25
    mix_weight: float = 0.5
    ema_decay: float = 0.999
    weight_l1: float = 0.1
    weight_l2: float = 1.0
    train_steps: int = 300
    batch_size: int = 4
    lr: float = 5e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.99


@dataclass(frozen=True)
class InferenceSection:
    k: int = 8
    guidance_start: float = 2.0
    guidance_end: float = 0.0
    frame_floor: float = 0.25
    plateau_frames: int = 0
    horizon: int = 8


@dataclass(frozen=True)
class ScalingSection:
    sizes: tuple = ((32, 2), (48, 2), (64, 3), (96, 3), (128, 4))
    train_steps: int = 400
    batch_size: int = 8
    frame_height: int = 16
    frame_width: int = 32
    steps: int = 4
    text_slots: int = 4
    train_episodes: int = 48
    val_episodes: int = 8


@dataclass(frozen=True)
class PipelineConfig:
    format_version: str = FORMAT_VERSION
    seed: int = 0
    out_root: str = "runs/default"
    data: DataSection = field(default_factory=DataSection)
    tokenizer: TokenizerSection = field(default_factory=TokenizerSection)
    world_model: WorldModelSection = field(default_factory=WorldModelSection)
    decoder: DecoderSection = field(default_factory=DecoderSection)
    inference: InferenceSection = field(default_factory=InferenceSection)
    scaling: ScalingSection = field(default_factory=ScalingSection)

    def __post_init__(self):
        if not str(self.format_version):
            raise ValueError("format_version must be present")
        if self.data.frame_height % self.tokenizer.downsample or \
           self.data.frame_width % self.tokenizer.downsample:
            raise ValueError(
                "data frame dims must be divisible by tokenizer.downsample"
            )
        if not 1 <= self.inference.k <= self.tokenizer.vocab_size:
            raise ValueError("inference.k must lie in [1, tokenizer.vocab_size]")

    @property
    def image_slots(self) -> int:
        return (self.data.frame_height // self.tokenizer.downsample) * (
            self.data.frame_width // self.tokenizer.downsample
        )

    def output_root(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV_VAR, self.out_root))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "data": DataSection,
    "tokenizer": TokenizerSection,
    "world_model": WorldModelSection,
    "decoder": DecoderSection,
    "inference": InferenceSection,
    "scaling": ScalingSection,
}


def config_from_dict(payload: dict) -> PipelineConfig:
    known = {"format_version", "seed", "out_root", *_SECTIONS}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {unknown}")
    kwargs: dict = {}
    for key in ("format_version", "seed", "out_root"):
        if key in payload:
            kwargs[key] = payload[key]
    for name, cls in _SECTIONS.items():
        section = payload.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be an object")
        obj = _strict(cls, _listified(section), name)
        kwargs[name] = obj
    try:
        return PipelineConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _listified(section: dict) -> dict:
    # JSON arrays arrive as lists; frozen dataclasses store tuples
    out = {}
    for key, value in section.items():
        if isinstance(value, list):
            out[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            out[key] = value
    return out


def parse_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(payload)


def echo_effective_config(config: PipelineConfig, out_root: Path) -> Path:
    out_root.mkdir(parents=True, exist_ok=True)
    path = out_root / "effective_config.json"
    path.write_text(json.dumps(config.to_dict(), indent=1, sort_keys=True))
    return path

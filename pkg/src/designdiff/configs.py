"""Configuration dataclasses and the shipped training profiles.

Three profiles ship:

* ``ci``   — small-budget settings used by the automated acceptance suite
             (hours on a 2-core CPU box).
* ``desk`` — the documented desk-scale recipe (4,000 synthetic records,
             roughly 2-6 h on one commodity GPU, longer on CPU).
* ``full`` — full-scale reference settings (BIKED-sized data, 512px,
             lr 1e-5 / batch 4 / 100 epochs); shipped for completeness,
             not runnable in CI.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field


@dataclass(frozen=True)
class UNetConfig:
    image_size: int = 64
    in_channels: int = 3
    channels: tuple[int, int, int, int] = (32, 64, 96, 128)  # at 64/32/16/8 px
    context_dim: int = 256
    time_dim: int = 128
    norm_groups: int = 8

    @property
    def latent_size(self) -> int:
        return self.image_size // 8


@dataclass(frozen=True)
class ScheduleConfig:
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass(frozen=True)
class TextEncoderConfig:
    embed_dim: int = 256  # D
    token_dim: int = 64
    max_tokens: int = 32


@dataclass(frozen=True)
class ParametricEncoderConfig:
    embed_dim: int = 256
    hidden_dim: int = 256


@dataclass(frozen=True)
class ComponentEncoderConfig:
    embed_dim: int = 256
    # 8 conv stages: (channels, stride) pairs; 3x3 filters throughout.
    # Desk ladder halves the full-scale one; the final entry is the spatial
    # channel width handed to the control branch.
    channels: tuple[int, ...] = (8, 8, 16, 16, 48, 48, 128, 160)
    strides: tuple[int, ...] = (1, 1, 2, 1, 2, 1, 2, 1)
    input_size: int = 64

    @property
    def spatial_channels(self) -> int:
        return self.channels[-1]

    @property
    def spatial_size(self) -> int:
        size = self.input_size
        for s in self.strides:
            size //= s
        return size


FULL_SCALE_COMPONENT_LADDER = (16, 16, 32, 32, 96, 96, 256, 320)


@dataclass(frozen=True)
class FusionConfig:
    embed_dim: int = 256
    mode: str = "linear"  # "attention" reserved; see fusion.fuse


@dataclass(frozen=True)
class ImputerConfig:
    hidden_dim: int = 256
    depth: int = 3
    time_dim: int = 64
    timesteps: int = 200
    beta_start: float = 1e-4
    # hotter than the image schedule: 200 steps need a faster decay to reach
    # a near-zero terminal signal level
    beta_end: float = 0.10
    lr: float = 1.5e-4
    batch_size: int = 128
    epochs: int = 60
    mask_ratio_lo: float = 0.05
    mask_ratio_hi: float = 0.95
    seed: int = 0


@dataclass(frozen=True)
class TrainBaseConfig:
    lr: float = 1e-4
    batch_size: int = 64
    steps: int = 30_000
    epochs: int | None = None  # when set, overrides steps (full-scale style)
    context_dropout: float = 0.1
    grad_clip: float = 1.0
    checkpoint_every: int = 0  # 0 = only final
    log_every: int = 50
    seed: int = 0


@dataclass(frozen=True)
class TrainControlConfig:
    lr: float = 1e-4
    batch_size: int = 64
    steps: int = 20_000
    epochs: int | None = None
    parametric_path: str = "imputation"  # or "zero_mask"
    mask_augment_prob: float = 0.3
    dropout_parametric: float = 0.3
    dropout_component: float = 0.3
    dropout_text: float = 0.1
    grad_clip: float = 1.0
    checkpoint_every: int = 0
    log_every: int = 50
    val_every: int = 0
    seed: int = 0


@dataclass(frozen=True)
class SampleConfig:
    steps: int = 50  # DDIM steps
    guidance_scale: float = 2.0


@dataclass(frozen=True)
class PipelineConfig:
    profile: str
    canvas_size: int = 64
    dataset_size: int = 4000
    dataset_seed: int = 7
    embed_dim: int = 256
    unet: UNetConfig = field(default_factory=UNetConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    text_encoder: TextEncoderConfig = field(default_factory=TextEncoderConfig)
    parametric_encoder: ParametricEncoderConfig = field(default_factory=ParametricEncoderConfig)
    component_encoder: ComponentEncoderConfig = field(default_factory=ComponentEncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    imputer: ImputerConfig = field(default_factory=ImputerConfig)
    train_base: TrainBaseConfig = field(default_factory=TrainBaseConfig)
    train_control: TrainControlConfig = field(default_factory=TrainControlConfig)
    sampling: SampleConfig = field(default_factory=SampleConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _with_embed_dim(cfg: PipelineConfig, d: int) -> PipelineConfig:
    return dataclasses.replace(
        cfg,
        embed_dim=d,
        unet=dataclasses.replace(cfg.unet, context_dim=d),
        text_encoder=dataclasses.replace(cfg.text_encoder, embed_dim=d),
        parametric_encoder=dataclasses.replace(cfg.parametric_encoder, embed_dim=d),
        component_encoder=dataclasses.replace(cfg.component_encoder, embed_dim=d),
        fusion=dataclasses.replace(cfg.fusion, embed_dim=d),
    )


def desk_profile() -> PipelineConfig:
    """The documented desk recipe: 64px canvas, 4,000 records, 30k/20k steps."""
    return PipelineConfig(profile="desk")


def ci_profile() -> PipelineConfig:
    """Reduced-budget profile for the acceptance suite on CPU-only boxes."""
    cfg = PipelineConfig(
        profile="ci",
        unet=UNetConfig(channels=(24, 48, 72, 96), context_dim=192),
        train_base=TrainBaseConfig(batch_size=16, steps=3000, log_every=100),
        train_control=TrainControlConfig(batch_size=16, steps=6000, log_every=100),
    )
    return _with_embed_dim(cfg, 192)


def full_profile() -> PipelineConfig:
    """Full-scale reference settings (512px, BIKED-sized, paper hyperparameters)."""
    cfg = PipelineConfig(
        profile="full",
        canvas_size=512,
        dataset_size=12_506,
        unet=UNetConfig(image_size=512, channels=(128, 256, 384, 512), context_dim=4096),
        component_encoder=ComponentEncoderConfig(
            embed_dim=4096,
            channels=FULL_SCALE_COMPONENT_LADDER,
            strides=(1, 1, 2, 1, 2, 1, 2, 1),
            input_size=512,
        ),
        train_base=TrainBaseConfig(lr=1e-5, batch_size=4, epochs=100, steps=0),
        train_control=TrainControlConfig(lr=1e-5, batch_size=4, epochs=100, steps=0),
    )
    return _with_embed_dim(cfg, 4096)


PROFILES = {"ci": ci_profile, "desk": desk_profile, "full": full_profile}


def get_profile(name: str) -> PipelineConfig:
    try:
        return PROFILES[name]()
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None

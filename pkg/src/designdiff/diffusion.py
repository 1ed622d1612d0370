"""Base image diffusion model: schedule, forward process, U-Net, samplers.

Pixel-space DDPM at desk scale (no latent stage). The U-Net runs at
resolutions image_size -> /2 -> /4 -> /8 with a timestep embedding and
cross-attention on a context sequence of width D at the three coarser
resolutions. Images are diffused on [-1, 1]-scaled pixels.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .configs import ScheduleConfig, TrainBaseConfig, UNetConfig
from .schema import DesignImage


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta schedule with cached alpha products.

    ``betas[k]`` is the variance added at step t = k+1; ``alpha_bars`` has
    length T+1 with ``alpha_bars[0] = 1`` so t = 0 is the identity boundary.
    """

    betas: np.ndarray

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=np.float64).copy()
        if betas.ndim != 1 or len(betas) < 1:
            raise ValueError("betas must be a non-empty 1-D array")
        if not (betas[0] > 0 and betas[-1] < 1 and np.all(np.diff(betas) >= 0)):
            raise ValueError("betas must satisfy 0 < beta_1 <= ... <= beta_T < 1")
        betas.flags.writeable = False
        object.__setattr__(self, "betas", betas)

    @classmethod
    def linear(cls, timesteps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        if timesteps < 1:
            raise ValueError(f"need at least one diffusion step, got {timesteps}")
        return cls(betas=np.linspace(beta_start, beta_end, timesteps))

    @classmethod
    def from_config(cls, cfg: ScheduleConfig) -> "NoiseSchedule":
        return cls.linear(cfg.timesteps, cfg.beta_start, cfg.beta_end)

    @property
    def timesteps(self) -> int:
        return len(self.betas)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        """Length T+1; alpha_bars[t] is the cumulative product up to step t."""
        return np.concatenate([[1.0], np.cumprod(self.alphas)])


def forward_noise(x0, t, noise, schedule: NoiseSchedule) -> torch.Tensor:
    """q(x_t | x_0) = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps on [-1, 1] pixels.

    ``x0`` may be a DesignImage (converted to a [-1, 1] CHW tensor) or an
    already-scaled tensor. ``t`` is an int or a per-sample integer tensor in
    [0, T]; t = 0 returns x0 exactly (the schedule's identity boundary).
    """
    if isinstance(x0, DesignImage):
        x0 = image_to_tensor(x0)
    noise = torch.as_tensor(noise, dtype=x0.dtype)
    if noise.shape != x0.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} != x0 shape {tuple(x0.shape)}")
    t = torch.as_tensor(t, dtype=torch.long)
    if torch.any(t < 0) or torch.any(t > schedule.timesteps):
        raise ValueError(f"t must lie in [0, {schedule.timesteps}]")
    # coefficients in float64: 1 - abar_t cancels catastrophically in float32
    ab = schedule.alpha_bars[t.numpy()]
    coef_signal = torch.as_tensor(np.sqrt(ab), dtype=x0.dtype)
    coef_noise = torch.as_tensor(np.sqrt(1.0 - ab), dtype=x0.dtype)
    while coef_signal.dim() < x0.dim():
        coef_signal = coef_signal.unsqueeze(-1)
        coef_noise = coef_noise.unsqueeze(-1)
    return coef_signal * x0 + coef_noise * noise


def image_to_tensor(image: DesignImage) -> torch.Tensor:
    """HWC [0,1] image -> CHW tensor on [-1, 1]."""
    arr = np.asarray(image.pixels[:, :, :3], dtype=np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1).copy()) * 2.0 - 1.0


def tensor_to_image(x: torch.Tensor) -> DesignImage:
    """CHW [-1,1] tensor -> clipped [0,1] image."""
    arr = ((x.detach().cpu().numpy() + 1.0) / 2.0).clip(0.0, 1.0)
    return DesignImage(pixels=arr.transpose(1, 2, 0).astype(np.float32))


def images_to_batch(images: Sequence[DesignImage]) -> torch.Tensor:
    return torch.stack([image_to_tensor(im) for im in images])


# -- U-Net ------------------------------------------------------------------


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / (half - 1))
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, time_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, cout)
        self.norm2 = nn.GroupNorm(groups, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(t_emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class CrossAttention(nn.Module):
    """Single-head cross-attention from pixels to a (B, L, D) context."""

    def __init__(self, channels: int, context_dim: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, channels)
        self.to_q = nn.Conv2d(channels, channels, 1)
        self.to_k = nn.Linear(context_dim, channels)
        self.to_v = nn.Linear(context_dim, channels)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        q = self.to_q(self.norm(x)).reshape(b, c, h * w).transpose(1, 2)  # (B, HW, C)
        k = self.to_k(context)  # (B, L, C)
        v = self.to_v(context)
        attn = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(c), dim=-1)  # (B, HW, L)
        out = (attn @ v).transpose(1, 2).reshape(b, c, h, w)
        return x + self.proj(out)


class EncoderStage(nn.Module):
    def __init__(self, cin: int, cout: int, time_dim: int, context_dim: int, groups: int, attn: bool):
        super().__init__()
        self.res = ResBlock(cin, cout, time_dim, groups)
        self.attn = CrossAttention(cout, context_dim, groups) if attn else None

    def forward(self, x, t_emb, context):
        x = self.res(x, t_emb)
        if self.attn is not None:
            x = self.attn(x, context)
        return x


class UNet(nn.Module):
    """Denoiser with 3 downsampling levels and cross-attention conditioning.

    The encoder emits 7 skip tensors plus the middle activation; the decoder
    consumes them in reverse. ``control`` residuals (one per skip + one for
    the middle) are added before the decoder consumes each tensor — the
    injection sites of the control branch.
    """

    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        c0, c1, c2, c3 = cfg.channels
        g = cfg.norm_groups
        td = cfg.time_dim
        cd = cfg.context_dim
        self.time_mlp = nn.Sequential(nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td))

        self.stem = nn.Conv2d(cfg.in_channels, c0, 3, padding=1)
        self.enc0 = EncoderStage(c0, c0, td, cd, g, attn=False)
        self.down0 = nn.Conv2d(c0, c1, 3, stride=2, padding=1)
        self.enc1 = EncoderStage(c1, c1, td, cd, g, attn=True)
        self.down1 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.enc2 = EncoderStage(c2, c2, td, cd, g, attn=True)
        self.down2 = nn.Conv2d(c2, c3, 3, stride=2, padding=1)

        self.mid1 = ResBlock(c3, c3, td, g)
        self.mid_attn = CrossAttention(c3, cd, g)
        self.mid2 = ResBlock(c3, c3, td, g)

        self.dec0 = EncoderStage(c3 + c3, c3, td, cd, g, attn=True)
        self.up0 = nn.ConvTranspose2d(c3, c2, 4, stride=2, padding=1)
        self.dec1 = EncoderStage(c2 + c2, c2, td, cd, g, attn=True)
        self.dec2 = EncoderStage(c2 + c2, c2, td, cd, g, attn=True)
        self.up1 = nn.ConvTranspose2d(c2, c1, 4, stride=2, padding=1)
        self.dec3 = EncoderStage(c1 + c1, c1, td, cd, g, attn=True)
        self.dec4 = EncoderStage(c1 + c1, c1, td, cd, g, attn=False)
        self.up2 = nn.ConvTranspose2d(c1, c0, 4, stride=2, padding=1)
        self.dec5 = EncoderStage(c0 + c0, c0, td, cd, g, attn=False)
        self.dec6 = EncoderStage(c0 + c0, c0, td, cd, g, attn=False)
        self.out_norm = nn.GroupNorm(g, c0)
        self.out_conv = nn.Conv2d(c0, cfg.in_channels, 3, padding=1)

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def encode(
        self,
        x: torch.Tensor,
        t_emb: torch.Tensor,
        context: torch.Tensor,
        hint: torch.Tensor | None = None,
    ) -> tuple[list[torch.Tensor], torch.Tensor]:
        """Encoder path; returns the 7 skip tensors and the middle activation.

        ``hint`` (if given) is added to the activation entering the middle
        block — the spatial conditioning entry point at latent resolution.
        """
        skips = []
        h = self.stem(x)
        skips.append(h)
        h = self.enc0(h, t_emb, context)
        skips.append(h)
        h = self.down0(h)
        skips.append(h)
        h = self.enc1(h, t_emb, context)
        skips.append(h)
        h = self.down1(h)
        skips.append(h)
        h = self.enc2(h, t_emb, context)
        skips.append(h)
        h = self.down2(h)
        skips.append(h)
        if hint is not None:
            h = h + hint
        h = self.mid1(h, t_emb)
        h = self.mid_attn(h, context)
        h = self.mid2(h, t_emb)
        return skips, h

    def forward(
        self,
        x: torch.Tensor,
        t: torch.Tensor,
        context: torch.Tensor,
        control: tuple[list[torch.Tensor], torch.Tensor] | None = None,
    ) -> torch.Tensor:
        t_emb = self.time_mlp(timestep_embedding(t, self.cfg.time_dim))
        skips, h = self.encode(x, t_emb, context)
        if control is not None:
            extra_skips, extra_mid = control
            skips = [s + e for s, e in zip(skips, extra_skips)]
            h = h + extra_mid

        h = self.dec0(torch.cat([h, skips.pop()], dim=1), t_emb, context)
        h = self.up0(h)
        h = self.dec1(torch.cat([h, skips.pop()], dim=1), t_emb, context)
        h = self.dec2(torch.cat([h, skips.pop()], dim=1), t_emb, context)
        h = self.up1(h)
        h = self.dec3(torch.cat([h, skips.pop()], dim=1), t_emb, context)
        h = self.dec4(torch.cat([h, skips.pop()], dim=1), t_emb, context)
        h = self.up2(h)
        h = self.dec5(torch.cat([h, skips.pop()], dim=1), t_emb, context)
        h = self.dec6(torch.cat([h, skips.pop()], dim=1), t_emb, context)
        return self.out_conv(F.silu(self.out_norm(h)))


def parameter_checksum(module: nn.Module) -> str:
    """SHA-256 over the concatenated parameter bytes, in state-dict order."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


# -- sampling -----------------------------------------------------------------


def ddim_timestep_sequence(total: int, steps: int) -> list[int]:
    """Descending subsequence of [1, T] with ``steps`` entries, ending at 1."""
    if steps > total:
        raise ValueError(f"steps ({steps}) exceeds schedule length ({total})")
    ts = np.unique(np.linspace(1, total, steps).round().astype(int))
    return ts[::-1].tolist()


@torch.no_grad()
def ddim_sample(
    eps_fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    shape: tuple[int, ...],
    schedule: NoiseSchedule,
    steps: int,
    seed: int,
) -> torch.Tensor:
    """Deterministic DDIM (eta = 0) from seeded Gaussian noise."""
    gen = torch.Generator().manual_seed(int(seed))
    x = torch.randn(*shape, generator=gen)
    abars = schedule.alpha_bars
    seq = ddim_timestep_sequence(schedule.timesteps, steps)
    for i, t in enumerate(seq):
        t_prev = seq[i + 1] if i + 1 < len(seq) else 0
        tb = torch.full((shape[0],), t, dtype=torch.long)
        eps = eps_fn(x, tb)
        ab_t, ab_prev = abars[t], abars[t_prev]
        x0 = (x - math.sqrt(1.0 - ab_t) * eps) / math.sqrt(ab_t)
        x0 = x0.clamp(-1.0, 1.0)
        x = math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps
    return x


def guided_eps_fn(
    cond_fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    uncond_fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    guidance_scale: float,
) -> Callable[[torch.Tensor, torch.Tensor], torch.Tensor]:
    """Classifier-free guidance blend: u + s * (c - u)."""
    if guidance_scale == 1.0:
        return cond_fn

    def eps(x, t):
        u = uncond_fn(x, t)
        return u + guidance_scale * (cond_fn(x, t) - u)

    return eps


# -- the trainable base bundle -------------------------------------------------


@dataclass
class TrainLog:
    rows: list[tuple[int, float, float]] = field(default_factory=list)  # step, loss, lr

    def add(self, step: int, loss: float, lr: float) -> None:
        self.rows.append((step, float(loss), float(lr)))

    def loss_at(self, step: int) -> float:
        candidates = [r for r in self.rows if r[0] <= step]
        return candidates[-1][1] if candidates else float("nan")

    @property
    def final_loss(self) -> float:
        return self.rows[-1][1] if self.rows else float("nan")

    def to_csv(self, path: Path) -> None:
        with open(path, "w") as fh:
            fh.write("step,loss,lr\n")
            for step, loss, lr in self.rows:
                fh.write(f"{step},{loss:.6f},{lr:.2e}\n")


class BaseDiffusion:
    """Frozen-after-training bundle: U-Net + schedule (+ the text context dim)."""

    def __init__(self, unet: UNet, schedule: NoiseSchedule, trained: bool = False):
        self.unet = unet
        self.schedule = schedule
        self.trained = trained

    @property
    def parameter_count(self) -> int:
        return self.unet.parameter_count

    def checksum(self) -> str:
        return parameter_checksum(self.unet)

    def freeze(self) -> None:
        self.unet.eval()
        for p in self.unet.parameters():
            p.requires_grad_(False)

    def eps(self, x: torch.Tensor, t: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        return self.unet(x, t, context)

    def sample(
        self,
        context: torch.Tensor,
        uncond_context: torch.Tensor,
        n: int,
        steps: int,
        seed: int,
        guidance_scale: float = 1.0,
    ) -> list[DesignImage]:
        """Deterministic DDIM sampling with classifier-free guidance."""
        if not self.trained:
            raise RuntimeError("sample() needs a trained base model")
        size = self.unet.cfg.image_size

        def expand(ctx):
            return ctx.expand(n, -1, -1) if ctx.shape[0] == 1 else ctx

        cond = expand(context)
        uncond = expand(uncond_context)
        eps = guided_eps_fn(
            lambda x, t: self.unet(x, t, cond),
            lambda x, t: self.unet(x, t, uncond),
            guidance_scale,
        )
        x = ddim_sample(eps, (n, 3, size, size), self.schedule, steps, seed)
        return [tensor_to_image(xi) for xi in x]

    def save(self, path: Path, extra: dict | None = None) -> None:
        payload = {
            "unet_config": self.unet.cfg.__dict__,
            "unet_state": self.unet.state_dict(),
            "betas": torch.from_numpy(self.schedule.betas.copy()),
            "trained": self.trained,
            "checksum": self.checksum(),
            "parameter_count": self.parameter_count,
            "extra": extra or {},
        }
        torch.save(payload, path)

    @classmethod
    def load(cls, path: Path) -> tuple["BaseDiffusion", dict]:
        payload = torch.load(path, map_location="cpu", weights_only=False)
        unet = UNet(UNetConfig(**payload["unet_config"]))
        unet.load_state_dict(payload["unet_state"])
        model = cls(unet, NoiseSchedule(betas=payload["betas"].numpy()), payload["trained"])
        if model.checksum() != payload["checksum"]:
            raise ValueError(f"checkpoint {path} is corrupt: parameter checksum mismatch")
        return model, payload["extra"]


def train_base(
    dataset,
    config: TrainBaseConfig,
    unet_config: UNetConfig,
    schedule: NoiseSchedule,
    text_encoder,
    prompts: Sequence[str] | None = None,
) -> tuple[BaseDiffusion, TrainLog]:
    """Train the epsilon-prediction U-Net with text cross-attention context.

    ``dataset`` is a DatasetSplit; the toy text encoder trains jointly.
    Classifier-free guidance comes from dropping the context to the empty
    embedding with probability ``config.context_dropout``.
    """
    records = list(dataset.train)
    if not records:
        raise ValueError("train_base needs a non-empty dataset")
    torch.manual_seed(config.seed)

    images = images_to_batch([r[1] for r in records])
    prompt_texts = list(prompts) if prompts is not None else [r[2].text for r in records]
    unique_prompts = sorted(set(prompt_texts))
    prompt_idx = torch.tensor([unique_prompts.index(p) for p in prompt_texts])

    unet = UNet(unet_config)
    params = list(unet.parameters()) + list(text_encoder.parameters())
    opt = torch.optim.AdamW(params, lr=config.lr)
    rng = torch.Generator().manual_seed(config.seed)
    log = TrainLog()

    n = len(records)
    steps = config.steps
    if config.epochs is not None:
        steps = config.epochs * max(1, n // config.batch_size)
    T = schedule.timesteps
    abars = torch.from_numpy(schedule.alpha_bars).float()

    unet.train()
    for step in range(1, steps + 1):
        idx = torch.randint(0, n, (config.batch_size,), generator=rng)
        x0 = images[idx]
        t = torch.randint(1, T + 1, (config.batch_size,), generator=rng)
        noise = torch.randn(x0.shape, generator=rng)
        ab = abars[t][:, None, None, None]
        x_t = torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * noise

        ctx = text_encoder.encode_batch([unique_prompts[i] for i in prompt_idx[idx]])
        drop = torch.rand(config.batch_size, generator=rng) < config.context_dropout
        if drop.any():
            empty = text_encoder.empty_context()
            ctx = torch.where(drop[:, None, None], empty, ctx)

        eps_hat = unet(x_t, t, ctx)
        loss = F.mse_loss(eps_hat, noise)
        if not torch.isfinite(loss):
            raise RuntimeError(
                f"non-finite base training loss at step {step} (lr={config.lr})"
            )
        opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(params, config.grad_clip)
        opt.step()
        if step % config.log_every == 0 or step == 1 or step == steps:
            log.add(step, loss.item(), config.lr)

    model = BaseDiffusion(unet, schedule, trained=True)
    model.freeze()
    return model, log

"""Control branch: a trainable copy of the frozen base's encoder path.

The branch duplicates the base U-Net's encoder and middle blocks. Its outputs
pass through 1x1 zero convolutions (zero weights AND zero biases at
construction) before being added to the corresponding base activations, so a
freshly built branch leaves the base's predictions untouched. The component
spatial hint enters through its own zero convolution at the branch activation
feeding the middle block (latent resolution); the fused multimodal embedding
is the branch's cross-attention context, while the base keeps the plain text
embedding as its own context.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .configs import TrainControlConfig
from .diffusion import BaseDiffusion, TrainLog, UNet, timestep_embedding
from .fusion import MultimodalCondition

logger = logging.getLogger(__name__)


class ControlError(RuntimeError):
    pass


class ControlBranch(nn.Module):
    """Trainable encoder/middle copy plus the zero-convolution taps."""

    def __init__(self, base_unet: UNet, hint_channels: int):
        super().__init__()
        cfg = base_unet.cfg
        self.cfg = cfg
        self.hint_channels = hint_channels
        # trainable copies (the base itself is referenced, never owned)
        self.time_mlp = copy.deepcopy(base_unet.time_mlp)
        self.stem = copy.deepcopy(base_unet.stem)
        self.enc0 = copy.deepcopy(base_unet.enc0)
        self.down0 = copy.deepcopy(base_unet.down0)
        self.enc1 = copy.deepcopy(base_unet.enc1)
        self.down1 = copy.deepcopy(base_unet.down1)
        self.enc2 = copy.deepcopy(base_unet.enc2)
        self.down2 = copy.deepcopy(base_unet.down2)
        self.mid1 = copy.deepcopy(base_unet.mid1)
        self.mid_attn = copy.deepcopy(base_unet.mid_attn)
        self.mid2 = copy.deepcopy(base_unet.mid2)

        c0, c1, c2, c3 = cfg.channels
        skip_channels = (c0, c0, c1, c1, c2, c2, c3)
        self.skip_taps = nn.ModuleList(nn.Conv2d(c, c, 1) for c in skip_channels)
        self.mid_tap = nn.Conv2d(c3, c3, 1)
        self.hint_conv = nn.Conv2d(hint_channels, c3, 1)
        for conv in [*self.skip_taps, self.mid_tap, self.hint_conv]:
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)

    def zero_convs(self) -> list[nn.Conv2d]:
        return [*self.skip_taps, self.mid_tap, self.hint_conv]

    def forward(
        self,
        x: torch.Tensor,
        t: torch.Tensor,
        context: torch.Tensor,
        hint: torch.Tensor | None = None,
        hint_mask: torch.Tensor | None = None,
    ) -> tuple[list[torch.Tensor], torch.Tensor]:
        """Zero-conved residuals: 7 skip additions plus the middle addition."""
        t_emb = self.time_mlp(timestep_embedding(t, self.cfg.time_dim))
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
            injected = self.hint_conv(hint)
            if hint_mask is not None:
                injected = injected * hint_mask[:, None, None, None]
            h = h + injected
        h = self.mid1(h, t_emb)
        h = self.mid_attn(h, context)
        h = self.mid2(h, t_emb)
        return [tap(s) for tap, s in zip(self.skip_taps, skips)], self.mid_tap(h)


def build_control_branch(base: BaseDiffusion, hint_channels: int) -> ControlBranch:
    """Copy the trained base's encoder path and zero-init the control taps."""
    if not base.trained:
        raise ControlError("control branch requires a trained base model")
    base.freeze()
    return ControlBranch(base.unet, hint_channels)


class ControlledDiffusionModel:
    """Frozen base denoiser steered by the trainable control branch."""

    def __init__(self, base: BaseDiffusion, branch: ControlBranch):
        if branch.cfg.channels != base.unet.cfg.channels or branch.cfg.context_dim != base.unet.cfg.context_dim:
            raise ControlError(
                "control branch is architecturally incompatible with the base "
                f"({branch.cfg.channels}/{branch.cfg.context_dim} vs "
                f"{base.unet.cfg.channels}/{base.unet.cfg.context_dim})"
            )
        self.base = base
        self.branch = branch

    def eps_controlled(
        self,
        x: torch.Tensor,
        t: torch.Tensor,
        text_ctx: torch.Tensor,
        fused_ctx: torch.Tensor,
        hint: torch.Tensor | None = None,
        hint_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Batched controlled prediction; base context stays the text embedding."""
        control = self.branch(x, t, fused_ctx, hint=hint, hint_mask=hint_mask)
        return self.base.unet(x, t, text_ctx, control=control)


def controlled_denoise(
    model: ControlledDiffusionModel,
    x_t: torch.Tensor,
    t: torch.Tensor,
    condition: MultimodalCondition | None,
) -> torch.Tensor:
    """Noise estimate for one condition (applied across the batch).

    A missing condition falls back to the pure base prediction with a logged
    warning. The condition's text embedding drives the base's own
    cross-attention; the fused embedding drives the branch.
    """
    b = x_t.shape[0]
    if t.dim() == 0:
        t = t.expand(b)
    if condition is None:
        logger.warning("controlled_denoise called without a condition; using base only")
        d = model.base.unet.cfg.context_dim
        return model.base.unet(x_t, t, torch.zeros(b, 1, d))
    text_ctx = (
        torch.tensor(condition.text.vector, dtype=torch.float32).reshape(1, 1, -1).expand(b, -1, -1)
    )
    fused_ctx = (
        torch.tensor(condition.fused.vector, dtype=torch.float32).reshape(1, 1, -1).expand(b, -1, -1)
    )
    hint = None
    if condition.spatial_hint is not None:
        hint = torch.tensor(condition.spatial_hint, dtype=torch.float32).unsqueeze(0).expand(
            b, -1, -1, -1
        )
    return model.eps_controlled(x_t, t, text_ctx, fused_ctx, hint=hint)


def train_control(
    model: ControlledDiffusionModel,
    builder,
    config: TrainControlConfig,
) -> tuple[ControlledDiffusionModel, TrainLog, TrainLog]:
    """Optimize the branch + encoders + fusion on epsilon-MSE.

    ``builder`` supplies per-batch conditions (a pipeline ConditionBuilder):
    it owns the modality encoders, the fusion module, and the parametric
    conditioning path (imputation autocomplete or zero-masking), and applies
    modality dropout. The base's weights are checksummed before and after;
    any change is a hard failure.

    Returns (model, train_log, val_log).
    """
    if builder.n_train == 0:
        raise ControlError("train_control needs a non-empty dataset")
    if not model.base.trained:
        raise ControlError("train_control needs a trained, frozen base")
    model.base.freeze()
    checksum_before = model.base.checksum()

    params = list(model.branch.parameters()) + list(builder.trainable_parameters())
    opt = torch.optim.AdamW(params, lr=config.lr)
    rng = torch.Generator().manual_seed(config.seed)
    np_rng = np.random.default_rng(config.seed)
    log, val_log = TrainLog(), TrainLog()

    steps = config.steps
    if config.epochs is not None:
        steps = config.epochs * max(1, builder.n_train // config.batch_size)

    model.branch.train()
    for step in range(1, steps + 1):
        idx = torch.randint(0, builder.n_train, (config.batch_size,), generator=rng)
        x0 = builder.images(idx)
        t = torch.randint(1, builder.timesteps + 1, (config.batch_size,), generator=rng)
        noise = torch.randn(x0.shape, generator=rng)
        x_t = builder.forward_noise(x0, t, noise)

        text_ctx, fused_ctx, hint, hint_mask = builder.training_contexts(idx, config, np_rng, rng)
        eps_hat = model.eps_controlled(x_t, t, text_ctx, fused_ctx, hint=hint, hint_mask=hint_mask)
        loss = F.mse_loss(eps_hat, noise)
        if not torch.isfinite(loss):
            raise ControlError(f"non-finite control training loss at step {step}")
        opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(params, config.grad_clip)
        opt.step()

        if step % config.log_every == 0 or step == 1 or step == steps:
            log.add(step, loss.item(), config.lr)
        if config.val_every and (step % config.val_every == 0 or step == steps):
            val_log.add(step, builder.validation_mse(model), config.lr)

    model.branch.eval()
    if model.base.checksum() != checksum_before:
        raise ControlError("frozen base weights changed during control training")
    return model, log, val_log

"""Diffusion-based parametric autocomplete.

Generates diverse complete designs from partial ones. A fully observed input
bypasses sampling entirely and is returned verbatim. During reverse
diffusion, observed coordinates are re-injected as forward-noised ground
truth at every step (inpainting-style replacement), which preserves observed
entries by construction; the decoded output additionally copies the observed
input values bit-exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec import FeatureCodec
from .configs import ImputerConfig
from .diffusion import NoiseSchedule, TrainLog, timestep_embedding
from .schema import FeatureSchema, ParametricDesign, SchemaError, require_valid

logger = logging.getLogger(__name__)

# render_role -> component group, the feature-dependency graph of the optional
# graph-attention denoiser (features sharing a component attend to each other)
_ROLE_GROUPS = {
    "saddle_y": "saddle",
    "saddle_w": "saddle",
    "seat_tube": "frame",
    "top_tube": "frame",
    "head_tube_slant": "frame",
    "head_tube_drop": "frame",
    "wheel_size": "wheel",
    "wheel_spread": "wheel",
    "stem": "handlebar",
    "handlebar_w": "handlebar",
    "handlebar_glyph": "handlebar",
    "crank": "crank",
    "bottles": "bottle",
    "rack": "rack",
    "fender": "fender",
    "kickstand": "kickstand",
}


def feature_adjacency(schema: FeatureSchema) -> np.ndarray:
    """Boolean adjacency: features co-occurring in a component (plus self)."""
    groups = [_ROLE_GROUPS.get(f.render_role, "_shared") for f in schema.features]
    n = len(groups)
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(n):
            adj[i, j] = groups[i] == groups[j] or groups[i] == "_shared" or groups[j] == "_shared"
    np.fill_diagonal(adj, True)
    return adj


class MlpDenoiser(nn.Module):
    """Fully connected denoiser on concat(x_t, mask, observed, t_emb)."""

    def __init__(self, width: int, cfg: ImputerConfig):
        super().__init__()
        self.width = width
        self.time_dim = cfg.time_dim
        layers: list[nn.Module] = []
        in_dim = 3 * width + cfg.time_dim
        for _ in range(cfg.depth):
            layers += [nn.Linear(in_dim, cfg.hidden_dim), nn.SiLU()]
            in_dim = cfg.hidden_dim
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(in_dim, width)

    def forward(self, x_t, t, mask, observed):
        t_emb = timestep_embedding(t, self.time_dim)
        h = torch.cat([x_t, mask, observed, t_emb], dim=1)
        return self.head(self.body(h))


class GraphAttentionDenoiser(nn.Module):
    """Config-gated variant: attention over feature tokens, masked by the
    component co-occurrence graph."""

    def __init__(self, width: int, cfg: ImputerConfig, codec: FeatureCodec):
        super().__init__()
        self.width = width
        self.time_dim = cfg.time_dim
        schema = codec.schema
        self.n_features = len(schema)
        slices = codec.slices()
        self.register_buffer(
            "adj", torch.from_numpy(feature_adjacency(schema)), persistent=False
        )
        self.block_sizes = [slices[f.name].stop - slices[f.name].start for f in schema.features]
        d = cfg.hidden_dim // 4
        self.token_in = nn.ModuleList(
            nn.Linear(3 * b + cfg.time_dim, d) for b in self.block_sizes
        )
        self.attn1 = nn.MultiheadAttention(d, num_heads=2, batch_first=True)
        self.attn2 = nn.MultiheadAttention(d, num_heads=2, batch_first=True)
        self.token_out = nn.ModuleList(nn.Linear(d, b) for b in self.block_sizes)

    def forward(self, x_t, t, mask, observed):
        t_emb = timestep_embedding(t, self.time_dim)
        tokens, pos = [], 0
        for i, b in enumerate(self.block_sizes):
            sl = slice(pos, pos + b)
            tokens.append(
                self.token_in[i](torch.cat([x_t[:, sl], mask[:, sl], observed[:, sl], t_emb], dim=1))
            )
            pos += b
        h = torch.stack(tokens, dim=1)  # (B, F, d)
        not_adjacent = ~self.adj
        h = h + self.attn1(h, h, h, attn_mask=not_adjacent, need_weights=False)[0]
        h = h + self.attn2(h, h, h, attn_mask=not_adjacent, need_weights=False)[0]
        out, pos = [], 0
        for i, b in enumerate(self.block_sizes):
            out.append(self.token_out[i](h[:, i]))
            pos += b
        return torch.cat(out, dim=1)


@dataclass
class ImputerModel:
    """Trained denoiser + schedule + frozen normalization statistics."""

    net: nn.Module
    schedule: NoiseSchedule
    codec: FeatureCodec
    mean: np.ndarray
    std: np.ndarray
    config: ImputerConfig
    final_loss: float = float("nan")
    denoiser_calls: int = 0  # instrumentation hook: bypass must keep this at 0

    def standardize(self, enc: np.ndarray) -> np.ndarray:
        return (enc - self.mean) / self.std

    def destandardize(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean

    def eps(self, x_t, t, mask, observed) -> torch.Tensor:
        self.denoiser_calls += 1
        return self.net(x_t, t, mask, observed)

    def save(self, path: Path) -> None:
        torch.save(
            {
                "net_state": self.net.state_dict(),
                "net_kind": type(self.net).__name__,
                "betas": torch.from_numpy(self.schedule.betas.copy()),
                "mean": torch.from_numpy(self.mean),
                "std": torch.from_numpy(self.std),
                "config": self.config.__dict__,
                "schema_hash": self.codec.schema.content_hash(),
                "final_loss": self.final_loss,
            },
            path,
        )

    @classmethod
    def load(cls, path: Path, schema: FeatureSchema) -> "ImputerModel":
        payload = torch.load(path, map_location="cpu", weights_only=False)
        if payload["schema_hash"] != schema.content_hash():
            raise SchemaError(
                "imputer checkpoint was trained for a different schema "
                f"(hash {payload['schema_hash']} != {schema.content_hash()})"
            )
        codec = FeatureCodec(schema)
        cfg = ImputerConfig(**payload["config"])
        if payload["net_kind"] == "GraphAttentionDenoiser":
            net: nn.Module = GraphAttentionDenoiser(codec.encoded_width, cfg, codec)
        else:
            net = MlpDenoiser(codec.encoded_width, cfg)
        net.load_state_dict(payload["net_state"])
        net.eval()
        return cls(
            net=net,
            schedule=NoiseSchedule(betas=payload["betas"].numpy()),
            codec=codec,
            mean=payload["mean"].numpy(),
            std=payload["std"].numpy(),
            config=cfg,
            final_loss=payload["final_loss"],
        )


def train_imputer(
    designs: Sequence[ParametricDesign],
    schema: FeatureSchema,
    config: ImputerConfig,
    use_graph_attention: bool = False,
) -> tuple[ImputerModel, TrainLog]:
    """Train the denoising imputer on complete designs.

    The loss is epsilon-MSE restricted to randomly masked feature subsets
    (per-sample mask ratio uniform in [mask_ratio_lo, mask_ratio_hi]).
    """
    if config.timesteps < 1:
        raise SchemaError("imputer config needs at least 1 diffusion step")
    designs = list(designs)
    if len(designs) < 100:
        raise SchemaError(f"train_imputer needs >=100 complete designs, got {len(designs)}")
    if not all(d.is_complete for d in designs):
        raise SchemaError("train_imputer needs complete designs")

    codec = FeatureCodec(schema)
    enc = np.stack([codec.encode(d) for d in designs])
    mean = enc.mean(axis=0)
    std = np.maximum(enc.std(axis=0), 1e-3)
    z_all = torch.from_numpy((enc - mean) / std).float()

    torch.manual_seed(config.seed)
    net: nn.Module = (
        GraphAttentionDenoiser(codec.encoded_width, config, codec)
        if use_graph_attention
        else MlpDenoiser(codec.encoded_width, config)
    )
    schedule = NoiseSchedule.linear(config.timesteps, config.beta_start, config.beta_end)
    abars = torch.from_numpy(schedule.alpha_bars).float()
    opt = torch.optim.AdamW(net.parameters(), lr=config.lr)
    rng = torch.Generator().manual_seed(config.seed)
    log = TrainLog()

    n, width = z_all.shape
    n_feat = codec.feature_count
    block = torch.from_numpy(
        np.stack([codec.encode_mask(m) for m in np.eye(n_feat, dtype=bool)])
    ).float()  # (F, width): encoded extent of each feature

    steps_per_epoch = max(1, n // config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    step = 0
    net.train()
    for _ in range(config.epochs):
        for _ in range(steps_per_epoch):
            step += 1
            idx = torch.randint(0, n, (config.batch_size,), generator=rng)
            z0 = z_all[idx]
            ratio = config.mask_ratio_lo + (
                config.mask_ratio_hi - config.mask_ratio_lo
            ) * torch.rand(config.batch_size, 1, generator=rng)
            feat_masked = torch.rand(config.batch_size, n_feat, generator=rng) < ratio
            masked = (feat_masked.float() @ block) > 0  # encoded-width mask
            observed = ~masked

            t = torch.randint(1, config.timesteps + 1, (config.batch_size,), generator=rng)
            noise = torch.randn(z0.shape, generator=rng)
            ab = abars[t][:, None]
            x_t = torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * noise

            eps_hat = net(x_t, t, observed.float(), z0 * observed)
            denom = masked.float().sum().clamp(min=1.0)
            loss = ((eps_hat - noise) ** 2 * masked.float()).sum() / denom
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite imputer loss at step {step} (lr={config.lr})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            if step % 50 == 0 or step == 1 or step == total_steps:
                log.add(step, loss.item(), config.lr)

    net.eval()
    model = ImputerModel(
        net=net,
        schedule=schedule,
        codec=codec,
        mean=mean,
        std=std,
        config=config,
        final_loss=log.final_loss,
    )
    return model, log


class AutocompleteResult(list):
    """List of complete designs; ``clamped[i]`` counts range-clamped entries."""

    def __init__(self, designs: Sequence[ParametricDesign], clamped: Sequence[int]):
        super().__init__(designs)
        self.clamped = tuple(clamped)


def autocomplete(
    partial: ParametricDesign,
    model: ImputerModel,
    n_samples: int,
    seed: int,
) -> AutocompleteResult:
    """Sample complete designs consistent with the observed entries.

    Fully observed inputs bypass sampling: the input is returned ``n_samples``
    times with zero denoiser evaluations. Observed entries of every output are
    bit-identical to the input. Out-of-range continuous samples are clamped
    and counted, never rejected.
    """
    if n_samples < 1:
        raise SchemaError(f"n_samples must be >= 1, got {n_samples}")
    schema = model.codec.schema
    if len(partial.values) != len(schema):
        raise SchemaError("design does not match the imputer's schema")
    require_valid(partial, schema)

    if partial.is_complete:
        return AutocompleteResult([partial] * n_samples, [0] * n_samples)
    designs, clamped = _impute_rows(model, [partial] * n_samples, seed)
    return AutocompleteResult(designs, clamped)


def impute_batch(
    model: ImputerModel, partials: Sequence[ParametricDesign], seed: int
) -> list[ParametricDesign]:
    """One completion per partial, sampled jointly (rows may differ in mask).

    Fully observed rows still run through the sampler batch but their decoded
    values are overwritten by the exact inputs, preserving the bypass
    semantics valuewise; call :func:`autocomplete` for the strict
    zero-denoiser-call bypass of a single design.
    """
    if not partials:
        return []
    designs, _ = _impute_rows(model, list(partials), seed)
    return designs


def _impute_rows(
    model: ImputerModel, partials: list[ParametricDesign], seed: int
) -> tuple[list[ParametricDesign], list[int]]:
    codec = model.codec
    n = len(partials)
    z_obs_rows = np.stack([model.standardize(codec.encode(p)) for p in partials])
    obs_rows = np.stack([codec.encode_mask(np.asarray(p.mask)) for p in partials])
    obs_b = torch.from_numpy(obs_rows).float()
    z_obs_b = torch.from_numpy(z_obs_rows).float() * obs_b

    schedule = model.schedule
    T = schedule.timesteps
    abars = torch.from_numpy(schedule.alpha_bars).float()
    alphas = torch.from_numpy(schedule.alphas).float()
    betas = torch.from_numpy(schedule.betas.copy()).float()

    gen = torch.Generator().manual_seed(int(seed))
    x = torch.randn(n, codec.encoded_width, generator=gen)
    with torch.no_grad():
        for t in range(T, 0, -1):
            tb = torch.full((n,), t, dtype=torch.long)
            eps = model.eps(x, tb, obs_b, z_obs_b)
            coef = betas[t - 1] / torch.sqrt(1.0 - abars[t])
            mean = (x - coef * eps) / torch.sqrt(alphas[t - 1])
            if t > 1:
                sigma = torch.sqrt(betas[t - 1] * (1.0 - abars[t - 1]) / (1.0 - abars[t]))
                x = mean + sigma * torch.randn(x.shape, generator=gen)
            else:
                x = mean
            # replacement conditioning: observed coords carry the forward-noised
            # ground truth at the new timestep (exact values once t-1 == 0)
            t_prev = t - 1
            noise = torch.randn(x.shape, generator=gen)
            z_t_prev = torch.sqrt(abars[t_prev]) * z_obs_b + torch.sqrt(1.0 - abars[t_prev]) * noise
            x = torch.where(obs_b.bool(), z_t_prev, x)

    designs, clamped_counts = [], []
    raw = model.destandardize(x.numpy().astype(np.float64))
    for i, partial in enumerate(partials):
        decoded, n_clamped = codec.decode(raw[i], clamp=True)
        values = decoded.values.copy()
        values[np.asarray(partial.mask)] = partial.values[np.asarray(partial.mask)]
        designs.append(ParametricDesign.complete(values))
        clamped_counts.append(n_clamped)
    if any(clamped_counts):
        logger.debug("autocomplete clamped %s out-of-range entries", sum(clamped_counts))
    return designs, clamped_counts


def impute_masked_zero(partial: ParametricDesign, codec: FeatureCodec) -> tuple[np.ndarray, np.ndarray]:
    """Zero-filling ablation path: unobserved entries are exactly 0 in the
    normalized encoding; the per-feature mask passes through unchanged."""
    require_valid(partial, codec.schema)
    return codec.encode(partial), np.asarray(partial.mask, dtype=bool).copy()

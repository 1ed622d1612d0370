"""Multimodal fusion: concat parametric+component embeddings, project, add text.

fused = text + FCproj(concat(parametric, component_pooled))

Absent modalities are replaced by the zero vector of width D (matching the
zero-filled ablation convention) with their provenance flag set to False.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .configs import FusionConfig
from .encoders import ComponentFeatures, Embedding


@dataclass(frozen=True)
class MultimodalCondition:
    """Fused conditioning embedding plus the optional spatial component hint.

    ``text`` keeps the raw text embedding alongside the fused one because the
    frozen base's own cross-attention consumes the text embedding while the
    control branch consumes the fused embedding.
    """

    fused: Embedding
    text: Embedding
    spatial_hint: np.ndarray | None
    has_parametric: bool
    has_component: bool
    has_text: bool

    def __post_init__(self) -> None:
        if self.fused.modality != "fused":
            raise ValueError("fused embedding must carry the 'fused' modality tag")
        if (self.spatial_hint is not None) != self.has_component:
            raise ValueError("spatial hint must be present iff a component condition was supplied")


class FusionModule(nn.Module):
    """Single linear projection of the concatenated non-text embeddings."""

    def __init__(self, cfg: FusionConfig):
        super().__init__()
        if cfg.mode != "linear":
            raise NotImplementedError(
                f"fusion mode {cfg.mode!r} is reserved but not implemented; use 'linear'"
            )
        self.cfg = cfg
        self.proj = nn.Linear(2 * cfg.embed_dim, cfg.embed_dim)

    def forward(self, param_emb: torch.Tensor, comp_emb: torch.Tensor, text_emb: torch.Tensor) -> torch.Tensor:
        return text_emb + self.proj(torch.cat([param_emb, comp_emb], dim=-1))


def fuse(
    param_emb: Embedding | None,
    comp: ComponentFeatures | None,
    text_emb: Embedding,
    module: FusionModule,
) -> MultimodalCondition:
    """Fuse whatever modalities are present; text is always present.

    Raises on width mismatches. The component spatial map passes through
    untouched for the control branch's hint path.
    """
    d = module.cfg.embed_dim
    if text_emb.width != d:
        raise ValueError(f"text embedding width {text_emb.width} != D={d}")
    if param_emb is not None and param_emb.width != d:
        raise ValueError(f"parametric embedding width {param_emb.width} != D={d}")
    if comp is not None and comp.pooled.width != d:
        raise ValueError(f"component embedding width {comp.pooled.width} != D={d}")

    p = torch.zeros(1, d) if param_emb is None else torch.tensor(
        param_emb.vector, dtype=torch.float32
    ).reshape(1, d)
    c = torch.zeros(1, d) if comp is None else torch.tensor(
        comp.pooled.vector, dtype=torch.float32
    ).reshape(1, d)
    with torch.no_grad():
        contribution = module.proj(torch.cat([p, c], dim=-1))[0].numpy().astype(np.float64)
    # adding the projection to the float64 text vector keeps the additive
    # identity exact when the projection is zero
    fused_vec = text_emb.vector + contribution
    return MultimodalCondition(
        fused=Embedding(vector=fused_vec, modality="fused"),
        text=text_emb,
        spatial_hint=None if comp is None else comp.spatial,
        has_parametric=param_emb is not None,
        has_component=comp is not None,
        has_text=True,
    )

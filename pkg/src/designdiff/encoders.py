"""The three modality encoders: parametric, component, and toy text.

Each emits an embedding of the shared width D. The component encoder also
exposes its spatial feature map at the diffusion core's latent resolution,
which feeds the control branch's spatial-hint path.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .configs import ComponentEncoderConfig, ParametricEncoderConfig, TextEncoderConfig
from .schema import DesignImage, TextPrompt


@dataclass(frozen=True)
class Embedding:
    """A width-D vector tagged with the modality that produced it."""

    vector: np.ndarray
    modality: str  # parametric | component | text | fused

    def __post_init__(self) -> None:
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.ndim != 1:
            raise ValueError("embedding vector must be 1-D")
        if not np.all(np.isfinite(vec)):
            raise ValueError("embedding vector must be finite")
        vec.flags.writeable = False
        object.__setattr__(self, "vector", vec)

    @property
    def width(self) -> int:
        return len(self.vector)


class ParametricEncoder(nn.Module):
    """Two fully connected layers: FC2(silu(FC1(x))) -> width D."""

    def __init__(self, in_dim: int, cfg: ParametricEncoderConfig):
        super().__init__()
        self.in_dim = in_dim
        self.embed_dim = cfg.embed_dim
        self.fc1 = nn.Linear(in_dim, cfg.hidden_dim)
        self.fc2 = nn.Linear(cfg.hidden_dim, cfg.embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not torch.all(torch.isfinite(x)):
            raise ValueError("parametric encoder input must be finite")
        return self.fc2(F.silu(self.fc1(x)))


class ComponentEncoder(nn.Module):
    """Eight 3x3 convolution stages with strided downsampling to latent size.

    Returns a (spatial map, pooled embedding) pair: the spatial map matches
    the diffusion core's latent resolution and the configured channel width;
    the pooled path is a global average followed by a linear projection to D.
    """

    def __init__(self, cfg: ComponentEncoderConfig):
        super().__init__()
        if len(cfg.channels) != 8 or len(cfg.strides) != 8:
            raise ValueError("component encoder is specified as exactly 8 conv stages")
        self.cfg = cfg
        convs = []
        cin = 3
        for cout, stride in zip(cfg.channels, cfg.strides):
            convs.append(nn.Conv2d(cin, cout, 3, stride=stride, padding=1))
            cin = cout
        self.convs = nn.ModuleList(convs)
        self.pool_proj = nn.Linear(cfg.channels[-1], cfg.embed_dim)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.shape[-1] != self.cfg.input_size or x.shape[-2] != self.cfg.input_size:
            raise ValueError(
                f"component encoder expects {self.cfg.input_size}px input, got {tuple(x.shape[-2:])}"
            )
        h = x
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i < len(self.convs) - 1:
                h = F.silu(h)
        pooled = self.pool_proj(h.mean(dim=(2, 3)))
        return h, pooled


_TOKEN_RE = re.compile(r"[a-z0-9]+")

EMPTY_TOKEN = "<empty>"
OOV_TOKEN = "<oov>"

DEFAULT_VOCAB = (
    EMPTY_TOKEN,
    OOV_TOKEN,
    "bike",
    "white",
    "background",
    "bicycle",
    "design",
    "frame",
    "wheel",
    "saddle",
    "handlebar",
    "bottle",
    "crank",
    "rack",
    "fender",
    "kickstand",
    "stem",
    "red",
    "blue",
    "black",
    "road",
    "city",
    "mountain",
    "ant",
    "lion",
    "0",
    "1",
    "2",
)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class TextEncoder(nn.Module):
    """CLIP stand-in: token embeddings, mean pool, linear projection to D.

    Tokenization lowercases and splits on non-alphanumerics; unknown tokens
    map to a dedicated OOV token and the empty prompt to the empty token.
    """

    def __init__(self, cfg: TextEncoderConfig, vocab: Sequence[str] = DEFAULT_VOCAB):
        super().__init__()
        vocab = list(vocab)
        for special in (EMPTY_TOKEN, OOV_TOKEN):
            if special not in vocab:
                vocab.insert(0, special)
        self.cfg = cfg
        self.vocab = tuple(vocab)
        self.token_ids = {tok: i for i, tok in enumerate(self.vocab)}
        self.embeddings = nn.Embedding(len(self.vocab), cfg.token_dim)
        self.proj = nn.Linear(cfg.token_dim, cfg.embed_dim)

    def token_id(self, token: str) -> int:
        return self.token_ids.get(token, self.token_ids[OOV_TOKEN])

    def ids_for(self, text: str) -> list[int]:
        tokens = tokenize(text)[: self.cfg.max_tokens]
        if not tokens:
            return [self.token_ids[EMPTY_TOKEN]]
        return [self.token_id(t) for t in tokens]

    def forward(self, prompt: str | TextPrompt) -> torch.Tensor:
        """Single-prompt context of shape (1, 1, D)."""
        text = prompt.text if isinstance(prompt, TextPrompt) else prompt
        return self.encode_batch([text])

    def encode_batch(self, texts: Sequence[str]) -> torch.Tensor:
        """(B, 1, D): mean-pooled token embeddings projected to width D."""
        pooled = []
        for text in texts:
            ids = torch.tensor(self.ids_for(text), dtype=torch.long)
            pooled.append(self.embeddings(ids).mean(dim=0))
        return self.proj(torch.stack(pooled)).unsqueeze(1)

    def empty_context(self) -> torch.Tensor:
        return self.encode_batch([""])

    def save_vocab(self, path: Path) -> None:
        Path(path).write_text("\n".join(self.vocab) + "\n")

    @staticmethod
    def load_vocab(path: Path) -> tuple[str, ...]:
        return tuple(line for line in Path(path).read_text().splitlines() if line)


def encode_parametric(values: np.ndarray, encoder: ParametricEncoder) -> Embedding:
    """Encode a complete, normalized model-input vector to a width-D embedding."""
    x = torch.as_tensor(np.asarray(values, dtype=np.float32)).reshape(1, -1)
    with torch.no_grad():
        out = encoder(x)
    return Embedding(vector=out[0].numpy().astype(np.float64), modality="parametric")


@dataclass(frozen=True)
class ComponentFeatures:
    """Pooled embedding plus the latent-resolution spatial feature map."""

    pooled: Embedding
    spatial: np.ndarray

    def __post_init__(self) -> None:
        spatial = np.asarray(self.spatial, dtype=np.float32)
        if spatial.ndim != 3:
            raise ValueError("spatial map must be (C, H, W)")
        spatial.flags.writeable = False
        object.__setattr__(self, "spatial", spatial)


def encode_components(composite: DesignImage, encoder: ComponentEncoder) -> ComponentFeatures:
    """Encode an assembled composite image into pooled + spatial features."""
    arr = np.asarray(composite.pixels[:, :, :3], dtype=np.float32).transpose(2, 0, 1)
    x = torch.from_numpy(arr.copy()).unsqueeze(0) * 2.0 - 1.0
    with torch.no_grad():
        spatial, pooled = encoder(x)
    return ComponentFeatures(
        pooled=Embedding(vector=pooled[0].numpy().astype(np.float64), modality="component"),
        spatial=spatial[0].numpy(),
    )


def encode_text(prompt: TextPrompt | str, encoder: TextEncoder) -> Embedding:
    with torch.no_grad():
        ctx = encoder(prompt)
    return Embedding(vector=ctx[0, 0].numpy().astype(np.float64), modality="text")

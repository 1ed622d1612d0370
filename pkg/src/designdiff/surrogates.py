"""Per-feature surrogate predictors that read parameters back from images.

Small CNNs at desk scale (the full-scale reference uses a ResNet-18 per
feature). Regression surrogates predict the normalized feature value and
report R^2 on the held-out split; classification surrogates report accuracy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec import FeatureCodec
from .diffusion import images_to_batch
from .schema import DesignImage, FeatureSchema, SchemaError
from .synthetic import DatasetSplit

logger = logging.getLogger(__name__)


class SurrogateNet(nn.Module):
    """Three strided convolutions into a flattened linear head.

    The head is position-sensitive on purpose: most features are pixel
    positions/extents, which global pooling would erase.
    """

    def __init__(self, out_dim: int, width: int = 24, image_size: int = 64):
        super().__init__()
        self.image_size = image_size
        self.conv1 = nn.Conv2d(3, width, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(width, 2 * width, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(2 * width, 4 * width, 3, stride=2, padding=1)
        feat = 4 * width * (image_size // 8) ** 2
        self.head = nn.Linear(feat, out_dim)

    def forward(self, x):
        h = F.silu(self.conv1(x))
        h = F.silu(self.conv2(h))
        h = F.silu(self.conv3(h))
        return self.head(h.flatten(1))


@dataclass
class SurrogateModel:
    """One trained predictor: regression (R^2) or classification (accuracy)."""

    feature: str
    task: str  # "regression" | "classification"
    net: SurrogateNet
    score: float  # held-out R^2 or accuracy
    split_seed: int

    @torch.no_grad()
    def predict(self, images: Sequence[DesignImage], codec: FeatureCodec) -> np.ndarray:
        """Feature values (real units) or category indices per image."""
        x = images_to_batch(images)
        out = self.net(x)
        if self.task == "classification":
            return out.argmax(dim=1).numpy()
        unit = out[:, 0].numpy().astype(np.float64)
        return np.array([codec.denormalize_value(self.feature, u) for u in unit])


@dataclass
class SurrogateTrainConfig:
    lr: float = 2e-3
    batch_size: int = 64
    epochs: int = 8
    seed: int = 0
    width: int = 24


def r_squared(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Coefficient of determination; <= 0 when no better than the mean."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else float("-inf")
    return 1.0 - ss_res / ss_tot


def train_surrogates(
    dataset: DatasetSplit,
    schema: FeatureSchema,
    feature_list: Sequence[str],
    config: SurrogateTrainConfig | None = None,
) -> dict[str, SurrogateModel]:
    """Train one surrogate per requested feature; skip degenerate targets."""
    config = config or SurrogateTrainConfig()
    codec = FeatureCodec(schema)
    for name in feature_list:
        schema.feature(name)  # raises KeyError on unknown features

    x_train = images_to_batch([r[1] for r in dataset.train])
    x_test = images_to_batch([r[1] for r in dataset.test])
    image_size = dataset.train[0][1].height
    out: dict[str, SurrogateModel] = {}
    for name in feature_list:
        spec = schema.feature(name)
        idx = schema.index(name)
        y_train = np.array([r[0].values[idx] for r in dataset.train])
        y_test = np.array([r[0].values[idx] for r in dataset.test])
        if np.all(y_train == y_train[0]):
            logger.warning("skipping surrogate for %s: degenerate label variance", name)
            continue
        torch.manual_seed(config.seed)
        if spec.kind == "continuous":
            targets = torch.tensor(
                [codec.normalize_value(name, v) for v in y_train], dtype=torch.float32
            )
            net = SurrogateNet(out_dim=1, width=config.width, image_size=image_size)
            loss_fn = lambda pred, tgt: F.mse_loss(pred[:, 0], tgt)  # noqa: E731
            task = "regression"
        else:
            targets = torch.tensor(y_train, dtype=torch.long)
            net = SurrogateNet(
                out_dim=spec.num_categories, width=config.width, image_size=image_size
            )
            loss_fn = F.cross_entropy
            task = "classification"

        opt = torch.optim.AdamW(net.parameters(), lr=config.lr)
        rng = torch.Generator().manual_seed(config.seed)
        n = len(y_train)
        steps = max(1, n // config.batch_size)
        net.train()
        for _ in range(config.epochs):
            for _ in range(steps):
                sel = torch.randint(0, n, (config.batch_size,), generator=rng)
                loss = loss_fn(net(x_train[sel]), targets[sel])
                opt.zero_grad()
                loss.backward()
                opt.step()
        net.eval()

        with torch.no_grad():
            pred = net(x_test)
        if task == "regression":
            pred_units = np.array(
                [codec.denormalize_value(name, u) for u in pred[:, 0].numpy()]
            )
            score = r_squared(y_test, pred_units)
        else:
            score = float((pred.argmax(dim=1).numpy() == y_test).mean())
        out[name] = SurrogateModel(
            feature=name, task=task, net=net, score=score, split_seed=dataset.split_seed
        )
        logger.info("surrogate %s (%s): held-out score %.3f", name, task, score)
    return out


def save_surrogates(models: dict[str, SurrogateModel], path: Path) -> None:
    torch.save(
        {
            name: {
                "task": m.task,
                "state": m.net.state_dict(),
                "score": m.score,
                "split_seed": m.split_seed,
                "out_dim": m.net.head.out_features,
                "width": m.net.conv1.out_channels,
                "image_size": m.net.image_size,
            }
            for name, m in models.items()
        },
        path,
    )


def load_surrogates(path: Path) -> dict[str, SurrogateModel]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    out = {}
    for name, entry in payload.items():
        net = SurrogateNet(
            out_dim=entry["out_dim"], width=entry["width"], image_size=entry["image_size"]
        )
        net.load_state_dict(entry["state"])
        net.eval()
        out[name] = SurrogateModel(
            feature=name,
            task=entry["task"],
            net=net,
            score=entry["score"],
            split_seed=entry["split_seed"],
        )
    return out

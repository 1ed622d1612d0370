"""Image-quality and diversity metrics used by the experiment harness.

All functions are pure and operate on images normalized to [0, 1]
(MAX = 1). They accept either :class:`~designdiff.schema.DesignImage`
instances or raw numpy arrays.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .schema import DesignImage

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 8
SSIM_C1 = (0.01 * 1.0) ** 2
SSIM_C2 = (0.03 * 1.0) ** 2
IOC_FOREGROUND_TAU = 0.1


def _pixels(image) -> np.ndarray:
    if isinstance(image, DesignImage):
        return np.asarray(image.pixels, dtype=np.float64)
    return np.asarray(image, dtype=np.float64)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in decibels, 10*log10(MAX^2/MSE), MAX = 1.

    Identical images (MSE = 0) return the documented 100 dB cap.
    """
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ValueError(f"shape mismatch: {pa.shape} vs {pb.shape}")
    mse = float(np.mean((pa - pb) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def _to_gray(px: np.ndarray) -> np.ndarray:
    if px.ndim == 3:
        return px[:, :, :3].mean(axis=2)
    return px


def _window_sums(x: np.ndarray, k: int) -> np.ndarray:
    """Sum of x over every k x k window (stride 1) via integral images."""
    integral = np.zeros((x.shape[0] + 1, x.shape[1] + 1), dtype=np.float64)
    integral[1:, 1:] = np.cumsum(np.cumsum(x, axis=0), axis=1)
    return (
        integral[k:, k:] - integral[:-k, k:] - integral[k:, :-k] + integral[:-k, :-k]
    )


def ssim(a, b, window: int = SSIM_WINDOW) -> float:
    """Mean structural similarity over all window x window patches, stride 1.

    Images are grayscale-converted (channel mean), moments are population
    (1/N) statistics, and the stabilizers are C1 = (0.01 MAX)^2 and
    C2 = (0.03 MAX)^2 with MAX = 1. Result lies in [-1, 1].
    """
    ga, gb = _to_gray(_pixels(a)), _to_gray(_pixels(b))
    if ga.shape != gb.shape:
        raise ValueError(f"shape mismatch: {ga.shape} vs {gb.shape}")
    if ga.shape[0] < window or ga.shape[1] < window:
        raise ValueError(f"image smaller than the {window}x{window} SSIM window")
    n = window * window
    mu_a = _window_sums(ga, window) / n
    mu_b = _window_sums(gb, window) / n
    var_a = _window_sums(ga * ga, window) / n - mu_a**2
    var_b = _window_sums(gb * gb, window) / n - mu_b**2
    cov = _window_sums(ga * gb, window) / n - mu_a * mu_b
    score = ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    )
    return float(score.mean())


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - cosine similarity, with zero vectors treated as distance 1."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 and nv == 0.0:
        return 0.0
    if nu == 0.0 or nv == 0.0:
        return 1.0
    return float(1.0 - np.dot(u, v) / (nu * nv))


def diversity_score(
    samples: Sequence,
    feature_fn: Callable[[object], np.ndarray],
    distance_fn: Callable[[np.ndarray, np.ndarray], float] = cosine_distance,
) -> float:
    """Mean pairwise feature distance with the 2/(n(n-1)) normalization.

    ``feature_fn`` maps a sample to its feature representation (the
    experiment harness defaults this to the component encoder's pooled
    features); ``distance_fn`` defaults to cosine distance.
    """
    n = len(samples)
    if n < 2:
        raise ValueError(f"diversity needs at least 2 samples, got {n}")
    feats = [np.asarray(feature_fn(s), dtype=np.float64).ravel() for s in samples]
    total = 0.0
    for i in range(n - 1):
        for j in range(i + 1, n):
            total += distance_fn(feats[i], feats[j])
    return 2.0 * total / (n * (n - 1))


def foreground_mask(
    image, background: tuple[float, float, float] = (1.0, 1.0, 1.0), tau: float = IOC_FOREGROUND_TAU
) -> np.ndarray:
    """Pixels whose max-channel distance from the background color exceeds tau."""
    px = _pixels(image)[:, :, :3]
    bg = np.asarray(background, dtype=np.float64)
    return np.max(np.abs(px - bg), axis=2) > tau


def ioc(
    component_mask: np.ndarray,
    generated,
    background: tuple[float, float, float] = (1.0, 1.0, 1.0),
    tau: float = IOC_FOREGROUND_TAU,
) -> float:
    """Intersection over component: |foreground & mask| / |mask|, in [0, 1]."""
    mask = np.asarray(component_mask, dtype=bool)
    area = int(mask.sum())
    if area == 0:
        raise ValueError("component mask is empty")
    fg = foreground_mask(generated, background=background, tau=tau)
    if fg.shape != mask.shape:
        raise ValueError(f"shape mismatch: mask {mask.shape} vs image {fg.shape}")
    return float(np.logical_and(fg, mask).sum() / area)

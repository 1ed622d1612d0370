import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from designdiff.metrics import (
    SSIM_C1,
    SSIM_C2,
    cosine_distance,
    diversity_score,
    foreground_mask,
    ioc,
    psnr,
    ssim,
)


def _img(arr):
    return np.asarray(arr, dtype=np.float64)


def test_psnr_identical_caps_at_100db():
    a = _img(np.random.default_rng(0).random((16, 16, 3)))
    assert psnr(a, a) == 100.0


def test_psnr_full_scale_error_is_zero_db():
    a = np.zeros((8, 8, 3))
    b = np.ones((8, 8, 3))
    assert psnr(a, b) == pytest.approx(0.0, abs=1e-12)


def test_psnr_mse_001_is_exactly_20db():
    a = np.zeros((10, 10, 3))
    b = np.full((10, 10, 3), 0.1)
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4, 3)), np.zeros((5, 5, 3)))


def test_psnr_symmetry():
    rng = np.random.default_rng(1)
    a, b = rng.random((12, 12, 3)), rng.random((12, 12, 3))
    assert psnr(a, b) == pytest.approx(psnr(b, a), abs=1e-12)


def _ssim_bruteforce(a, b, window=8):
    """Literal sliding-window evaluation of the SSIM formula."""
    ga = a[:, :, :3].mean(axis=2) if a.ndim == 3 else a
    gb = b[:, :, :3].mean(axis=2) if b.ndim == 3 else b
    h, w = ga.shape
    scores = []
    for i in range(h - window + 1):
        for j in range(w - window + 1):
            x = ga[i : i + window, j : j + window]
            y = gb[i : i + window, j : j + window]
            mx, my = x.mean(), y.mean()
            vx, vy = x.var(), y.var()
            cov = ((x - mx) * (y - my)).mean()
            scores.append(
                ((2 * mx * my + SSIM_C1) * (2 * cov + SSIM_C2))
                / ((mx**2 + my**2 + SSIM_C1) * (vx + vy + SSIM_C2))
            )
    return float(np.mean(scores))


def test_ssim_identical_is_one():
    a = _img(np.random.default_rng(2).random((16, 16, 3)))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_images_closed_form():
    a = np.full((12, 12, 3), 0.2)
    b = np.full((12, 12, 3), 0.8)
    # hand evaluation with zero variances: (2*0.2*0.8 + C1) / (0.2^2+0.8^2 + C1)
    expected = (2 * 0.2 * 0.8 + SSIM_C1) / (0.2**2 + 0.8**2 + SSIM_C1)
    assert ssim(a, b) == pytest.approx(expected, abs=1e-12)


def test_ssim_inverted_checkerboard_is_negative():
    yy, xx = np.mgrid[0:16, 0:16]
    a = ((yy + xx) % 2).astype(np.float64)
    b = 1.0 - a
    value = ssim(a[:, :, None].repeat(3, 2), b[:, :, None].repeat(3, 2))
    assert value < 0.0
    assert value == pytest.approx(_ssim_bruteforce(a, b), abs=1e-9)


def test_ssim_matches_bruteforce_on_random_images():
    rng = np.random.default_rng(3)
    a, b = rng.random((14, 14, 3)), rng.random((14, 14, 3))
    assert ssim(a, b) == pytest.approx(_ssim_bruteforce(a, b), abs=1e-6)


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError):
        ssim(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)))


def test_ssim_symmetry():
    rng = np.random.default_rng(4)
    a, b = rng.random((12, 12, 3)), rng.random((12, 12, 3))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_diversity_identical_samples_zero():
    v = np.array([1.0, 2.0, 3.0])
    assert diversity_score([v] * 5, lambda x: x) == 0.0


def test_diversity_two_samples_reduces_to_distance():
    u, v = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert diversity_score([u, v], lambda x: x) == pytest.approx(cosine_distance(u, v))


def test_diversity_matches_bruteforce_enumeration():
    rng = np.random.default_rng(5)
    samples = [rng.random(8) for _ in range(5)]
    got = diversity_score(samples, lambda x: x)
    n = len(samples)
    expected = (
        2.0
        / (n * (n - 1))
        * sum(cosine_distance(a, b) for a, b in itertools.combinations(samples, 2))
    )
    assert got == pytest.approx(expected, abs=1e-9)


def test_diversity_needs_two_samples():
    with pytest.raises(ValueError):
        diversity_score([np.ones(3)], lambda x: x)


def test_diversity_permutation_invariant_and_nonnegative():
    rng = np.random.default_rng(6)
    samples = [rng.random(6) for _ in range(4)]
    a = diversity_score(samples, lambda x: x)
    b = diversity_score(samples[::-1], lambda x: x)
    assert a == pytest.approx(b, abs=1e-12)
    assert a >= 0.0


def test_ioc_full_cover_and_empty_image():
    mask = np.zeros((32, 32), dtype=bool)
    mask[5:15, 5:15] = True
    covered = np.ones((32, 32, 3))
    covered[5:15, 5:15] = 0.0
    assert ioc(mask, covered) == 1.0
    assert ioc(mask, np.ones((32, 32, 3))) == 0.0


def test_ioc_half_cover_exact():
    mask = np.zeros((32, 32), dtype=bool)
    mask[5:15, 5:15] = True  # 100 pixels
    img = np.ones((32, 32, 3))
    img[5:10, 5:15] = 0.0  # 50 of them covered
    assert ioc(mask, img) == 0.5


def test_ioc_rejects_empty_mask():
    with pytest.raises(ValueError):
        ioc(np.zeros((8, 8), dtype=bool), np.ones((8, 8, 3)))


def test_ioc_monotone_under_added_foreground():
    rng = np.random.default_rng(7)
    mask = rng.random((16, 16)) > 0.5
    img = np.ones((16, 16, 3))
    img[4:8, 4:8] = 0.0
    base = ioc(mask, img)
    img2 = img.copy()
    img2[10:12, 10:12] = 0.0
    assert ioc(mask, img2) >= base


def test_foreground_tau_threshold():
    img = np.ones((4, 4, 3))
    img[0, 0] = 0.95  # within tau=0.1 of white -> background
    img[1, 1] = 0.5
    fg = foreground_mask(img)
    assert not fg[0, 0] and fg[1, 1]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_ioc_bounds_property(seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((12, 12)) > 0.4
    if not mask.any():
        mask[0, 0] = True
    img = rng.random((12, 12, 3))
    assert 0.0 <= ioc(mask, img) <= 1.0

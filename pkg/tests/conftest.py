"""Shared fixtures and independent reference implementations.

The reference metric implementations here are deliberately naive
(scalar loops, direct formulas) so the fast vectorized versions in the
package are checked against genuinely independent code paths.
"""

import numpy as np
import pytest

from darksplat import scenes, splatter
from darksplat.imagekit import SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW


def random_image(rng, h=16, w=16):
    return rng.random((h, w, 3))


# ---------------------------------------------------------------------------
# Naive metric references


def ref_mse(a, b):
    total = 0.0
    h, w, c = a.shape
    for i in range(h):
        for j in range(w):
            for k in range(c):
                d = a[i, j, k] - b[i, j, k]
                total += d * d
    return total / (h * w * c)


def ref_psnr(a, b):
    m = ref_mse(a, b)
    if m == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / m)


def _ref_window():
    r = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * SSIM_SIGMA**2))
    w = np.outer(g, g)
    return w / w.sum()


def ref_ssim(a, b):
    """Windowed-statistics SSIM computed one window at a time."""
    w = _ref_window()
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    h, wid = a.shape[:2]
    n = SSIM_WINDOW
    values = []
    for c in range(3):
        for i in range(h - n + 1):
            for j in range(wid - n + 1):
                x = a[i : i + n, j : j + n, c]
                y = b[i : i + n, j : j + n, c]
                mx = np.sum(w * x)
                my = np.sum(w * y)
                vx = np.sum(w * x * x) - mx * mx
                vy = np.sum(w * y * y) - my * my
                cov = np.sum(w * x * y) - mx * my
                values.append(
                    ((2 * mx * my + c1) * (2 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2))
                )
    return float(np.mean(values))


def ref_histogram(img, bins=256):
    out = np.zeros((3, bins), dtype=np.int64)
    h, w = img.shape[:2]
    for i in range(h):
        for j in range(w):
            for c in range(3):
                v = min(max(img[i, j, c], 0.0), 1.0)
                idx = min(int(v * bins), bins - 1)
                out[c, idx] += 1
    return out


def ref_hist_correlation(a, b, bins=256):
    ha = ref_histogram(a, bins) / (a.shape[0] * a.shape[1])
    hb = ref_histogram(b, bins) / (b.shape[0] * b.shape[1])
    total = 0.0
    for c in range(3):
        x = ha[c] - ha[c].mean()
        y = hb[c] - hb[c].mean()
        sx = np.sqrt(np.sum(x * x))
        sy = np.sqrt(np.sum(y * y))
        if sx == 0.0 or sy == 0.0:
            total += 1.0 if np.array_equal(ha[c], hb[c]) else 0.0
        else:
            total += np.sum(x * y) / (sx * sy)
    return total / 3.0


# ---------------------------------------------------------------------------
# Finite differences


def central_diff(f, x, h=1e-4):
    """Central finite difference of a scalar function at scalar x."""
    return (f(x + h) - f(x - h)) / (2.0 * h)


def assert_grad_close(analytic, numeric, rel=1e-3, floor=1e-6):
    """Relative comparison that ignores near-zero gradient entries."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    mask = scale > floor
    if not np.any(mask):
        return
    err = np.abs(analytic - numeric)[mask] / scale[mask]
    assert float(err.max()) <= rel, f"max relative gradient error {err.max():.3g}"


# ---------------------------------------------------------------------------
# Small scenes


@pytest.fixture(scope="session")
def toy_scene():
    """Ground-truth cloud and an 8-camera ring at 64x64."""
    return scenes.builtin_scene("toy-spheres", n_views=8, image_size=64)


@pytest.fixture(scope="session")
def toy_clean(toy_scene):
    cloud, cams = toy_scene
    return [np.clip(splatter.render(cloud, cam), 0.0, 1.0) for cam in cams]


def tiny_cloud(rng, k=5):
    """Small random cloud kept near the camera frustum."""
    return splatter.GaussianCloud(
        positions=rng.uniform(-0.5, 0.5, (k, 3)),
        log_scales=rng.uniform(np.log(0.1), np.log(0.3), (k, 3)),
        rotations=rng.standard_normal((k, 4)),
        opacity_logits=rng.uniform(-1.0, 1.5, k),
        colors=rng.uniform(0.1, 0.9, (k, 3)),
        background=rng.uniform(0.0, 0.2, 3),
    )


def tiny_camera(size=16, focal=20.0):
    r, t = scenes.look_at((0.0, -2.5, 0.6), (0.0, 0.0, 0.0))
    c = (size - 1) / 2.0
    return splatter.Camera(
        rotation=r, translation=t, fx=focal, fy=focal, cx=c, cy=c, width=size, height=size
    )

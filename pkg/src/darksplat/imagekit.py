"""Image container conventions, quality metrics, histograms and file I/O.

An image is a float64 numpy array of shape (H, W, 3) with intensities
nominally in [0, 1]. All metrics reduce in a fixed order so results are
deterministic run to run.
"""

from __future__ import annotations

import math

import numpy as np
from PIL import Image as PILImage
from scipy.signal import fftconvolve

# SSIM window parameters (Wang et al. defaults, dynamic range 1.0)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# Finite stand-in for infinite PSNR when emitting CSV
PSNR_CAP_DB = 99.0


class ImageError(ValueError):
    """Raised on malformed images or incompatible image pairs."""


def as_image(data) -> np.ndarray:
    """Validate and return a (H, W, 3) float64 image array."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageError(f"expected (H, W, 3) image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ImageError(f"degenerate image dimensions {arr.shape[:2]}")
    return arr


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ImageError(f"image dimension mismatch: {a.shape} vs {b.shape}")


def mse(a, b) -> float:
    """Mean squared error over all pixels and channels."""
    a, b = as_image(a), as_image(b)
    _check_same_shape(a, b)
    d = a - b
    return float(np.mean(d * d))


def psnr(a, b) -> float:
    """PSNR in dB with peak 1.0; returns math.inf when the images are equal."""
    m = mse(a, b)
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / m)


def psnr_capped(a, b) -> float:
    """PSNR with the infinite sentinel replaced by the documented cap."""
    p = psnr(a, b)
    return min(p, PSNR_CAP_DB)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-D Gaussian window used by SSIM."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_channel_stats(x: np.ndarray, y: np.ndarray, w: np.ndarray):
    mu_x = fftconvolve(x, w, mode="valid")
    mu_y = fftconvolve(y, w, mode="valid")
    xx = fftconvolve(x * x, w, mode="valid")
    yy = fftconvolve(y * y, w, mode="valid")
    xy = fftconvolve(x * y, w, mode="valid")
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    return mu_x, mu_y, var_x, var_y, cov


def ssim(a, b) -> float:
    """Mean SSIM over the valid window region, averaged over channels.

    11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1.0.
    Requires both image sides >= the window size.
    """
    value, _ = _ssim_impl(as_image(a), as_image(b), want_grad=False)
    return value


def ssim_and_grad(a, b):
    """SSIM value plus the analytic gradient of the value w.r.t. `a`."""
    return _ssim_impl(as_image(a), as_image(b), want_grad=True)


def _ssim_impl(a: np.ndarray, b: np.ndarray, want_grad: bool):
    _check_same_shape(a, b)
    h, w_px = a.shape[:2]
    if h < SSIM_WINDOW or w_px < SSIM_WINDOW:
        raise ImageError(
            f"image {h}x{w_px} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    w = gaussian_window()
    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2

    total = 0.0
    grad = np.zeros_like(a) if want_grad else None
    n_valid = (h - SSIM_WINDOW + 1) * (w_px - SSIM_WINDOW + 1)
    for c in range(3):
        x = a[:, :, c]
        y = b[:, :, c]
        mu_x, mu_y, var_x, var_y, cov = _ssim_channel_stats(x, y, w)
        a1 = 2.0 * mu_x * mu_y + c1
        a2 = 2.0 * cov + c2
        b1 = mu_x * mu_x + mu_y * mu_y + c1
        b2 = var_x + var_y + c2
        s = (a1 * a2) / (b1 * b2)
        total += float(np.mean(s))
        if not want_grad:
            continue
        # Chain rule through the five valid-mode window convolutions; the
        # adjoint of a valid correlation with a symmetric kernel is a full
        # convolution with the same kernel.
        up = 1.0 / (3.0 * n_valid)
        d_a1 = up * a2 / (b1 * b2)
        d_a2 = up * a1 / (b1 * b2)
        d_b1 = -up * s / b1
        d_b2 = -up * s / b2
        g_mu_x = 2.0 * mu_y * d_a1 + 2.0 * mu_x * d_b1 - 2.0 * mu_y * d_a2 + 2.0 * mu_x * (-d_b2)
        g_xx = d_b2  # via var_x = w*(x^2) - mu_x^2
        g_cov_to_xy = 2.0 * d_a2  # cov = w*(xy) - mu_x*mu_y enters a2 only
        gx = fftconvolve(g_mu_x, w, mode="full")
        gx += fftconvolve(g_xx, w, mode="full") * (2.0 * x)
        gx += fftconvolve(g_cov_to_xy, w, mode="full") * y
        grad[:, :, c] = gx
    value = total / 3.0
    return value, grad


def histogram(img, bins: int = 256) -> np.ndarray:
    """Per-channel histogram of shape (3, bins).

    Values are clamped to [0, 1] and binned by floor(v * bins); the top
    edge falls into the last bin.
    """
    img = as_image(img)
    if bins < 2:
        raise ImageError(f"need at least 2 bins, got {bins}")
    v = np.clip(img, 0.0, 1.0)
    idx = np.minimum((v * bins).astype(np.int64), bins - 1)
    out = np.empty((3, bins), dtype=np.int64)
    for c in range(3):
        out[c] = np.bincount(idx[:, :, c].ravel(), minlength=bins)
    return out


def hist_correlation(a, b, bins: int = 256) -> float:
    """Pearson correlation of per-channel normalized histograms, channel-averaged.

    Zero-variance convention: a channel pair with a flat (zero-spread)
    histogram scores 1.0 when the histograms are equal, else 0.0.
    """
    a, b = as_image(a), as_image(b)
    _check_same_shape(a, b)
    ha = histogram(a, bins).astype(np.float64)
    hb = histogram(b, bins).astype(np.float64)
    n = a.shape[0] * a.shape[1]
    ha /= n
    hb /= n
    total = 0.0
    for c in range(3):
        x = ha[c] - ha[c].mean()
        y = hb[c] - hb[c].mean()
        sx = float(np.sqrt(np.sum(x * x)))
        sy = float(np.sqrt(np.sum(y * y)))
        if sx == 0.0 or sy == 0.0:
            total += 1.0 if np.array_equal(ha[c], hb[c]) else 0.0
        else:
            total += float(np.sum(x * y)) / (sx * sy)
    return total / 3.0


# ---------------------------------------------------------------------------
# File I/O: 8-bit RGB PNG and 32-bit float PFM


def read_image(path) -> np.ndarray:
    path = str(path)
    if path.lower().endswith(".pfm"):
        return _read_pfm(path)
    if path.lower().endswith(".png"):
        return _read_png(path)
    raise ImageError(f"unsupported image format: {path}")


def write_image(path, img) -> None:
    img = as_image(img)
    path = str(path)
    if path.lower().endswith(".pfm"):
        _write_pfm(path, img)
    elif path.lower().endswith(".png"):
        _write_png(path, img)
    else:
        raise ImageError(f"unsupported image format: {path}")


def _read_png(path: str) -> np.ndarray:
    with PILImage.open(path) as im:
        if im.mode != "RGB":
            raise ImageError(f"{path}: expected 3-channel RGB PNG, got mode {im.mode}")
        arr = np.asarray(im, dtype=np.float64)
    return arr / 255.0


def _write_png(path: str, img: np.ndarray) -> None:
    q = np.clip(np.rint(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(q, mode="RGB").save(path)


def _read_pfm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"PF":
            raise ImageError(f"{path}: not a color PFM file (magic {magic!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise ImageError(f"{path}: malformed PFM dimension line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        data = f.read(w * h * 3 * 4)
        if len(data) != w * h * 3 * 4:
            raise ImageError(f"{path}: truncated PFM payload")
    endian = "<" if scale < 0 else ">"
    arr = np.frombuffer(data, dtype=np.dtype(endian + "f4")).reshape(h, w, 3)
    # PFM rows are stored bottom to top
    return np.ascontiguousarray(arr[::-1]).astype(np.float64)


def _write_pfm(path: str, img: np.ndarray) -> None:
    h, w = img.shape[:2]
    payload = img[::-1].astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(b"PF\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(payload)


def write_metrics_csv(path, rows) -> None:
    """Write per-view metric rows [(view_id, psnr_db, ssim), ...] plus a mean row."""
    with open(path, "w") as f:
        f.write("view_id,psnr_db,ssim\n")
        for view_id, p, s in rows:
            f.write(f"{view_id},{min(p, PSNR_CAP_DB):.6f},{s:.6f}\n")
        if rows:
            mp = float(np.mean([min(p, PSNR_CAP_DB) for _, p, _ in rows]))
            ms = float(np.mean([s for _, _, s in rows]))
            f.write(f"mean,{mp:.6f},{ms:.6f}\n")

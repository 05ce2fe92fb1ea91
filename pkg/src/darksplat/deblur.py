"""Pluggable deblurring stages: classical deconvolution plus an external hook.

Blind kernel identification searches a small grid of linear-motion kernels.
The initial stage identifies the kernel by matching the directional zero
pattern of the image's log power spectrum against each candidate transfer
function; the guided stage identifies the kernel by least-squares reblur
fit of a clean prior and uses the prior to initialize Richardson-Lucy
iterations.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve as ndi_convolve
from scipy.signal import convolve2d

from .imagekit import ImageError, as_image, read_image, write_image

GRID_LENGTHS = (1, 3, 5, 7, 9)
GRID_ANGLES = tuple(i * 22.5 for i in range(8))

_EPS = 1e-12


class DeblurError(RuntimeError):
    pass


class ExternalStageError(DeblurError):
    pass


@dataclass(frozen=True)
class MotionKernel:
    length: int
    angle: float
    taps: np.ndarray

    @classmethod
    def make(cls, length: int, angle: float) -> "MotionKernel":
        """Rasterize a unit-mass linear-motion kernel.

        `length` unit-spaced samples along the motion direction are splatted
        bilinearly into a length x length grid, so an axis-aligned kernel of
        length L has L equal taps of 1/L.
        """
        if length < 1 or length % 2 == 0:
            raise DeblurError(f"kernel length must be odd and >= 1, got {length}")
        if length == 1:
            return cls(1, 0.0, np.ones((1, 1)))
        taps = np.zeros((length, length))
        c = (length - 1) / 2.0
        theta = np.deg2rad(angle)
        ux, uy = np.cos(theta), np.sin(theta)
        for t in np.arange(length, dtype=np.float64) - c:
            px, py = c + t * ux, c + t * uy
            x0, y0 = int(np.floor(px)), int(np.floor(py))
            fx, fy = px - x0, py - y0
            for dy, wy in ((0, 1.0 - fy), (1, fy)):
                for dx, wx in ((0, 1.0 - fx), (1, fx)):
                    if wy * wx == 0.0:
                        continue
                    yy, xx = y0 + dy, x0 + dx
                    if 0 <= yy < length and 0 <= xx < length:
                        taps[yy, xx] += wy * wx
        taps /= taps.sum()
        return cls(length, float(angle), taps)


def kernel_grid(lengths=GRID_LENGTHS, angles=GRID_ANGLES) -> list:
    """Search grid ordered by length then angle; the delta appears once."""
    out = []
    for length in lengths:
        if length == 1:
            out.append(MotionKernel.make(1, 0.0))
            continue
        for angle in angles:
            out.append(MotionKernel.make(length, angle))
    return out


@dataclass(frozen=True)
class DeblurStage:
    kind: str = "richardson_lucy"  # identity | richardson_lucy | wiener | external
    lengths: tuple = GRID_LENGTHS
    angles: tuple = GRID_ANGLES
    rl_iterations: int = 30
    wiener_nsr: float = 0.01
    external_command: str = ""

    def validate(self) -> "DeblurStage":
        if self.kind not in ("identity", "richardson_lucy", "wiener", "external"):
            raise DeblurError(f"unknown deblur stage kind {self.kind!r}")
        if self.rl_iterations < 1:
            raise DeblurError("rl_iterations must be >= 1")
        if not self.lengths:
            raise DeblurError("empty kernel search grid")
        return self

    def grid(self) -> list:
        return kernel_grid(self.lengths, self.angles)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "lengths": list(self.lengths),
            "angles": list(self.angles),
            "rl_iterations": self.rl_iterations,
            "wiener_nsr": self.wiener_nsr,
            "external_command": self.external_command,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeblurStage":
        d = dict(d)
        if "lengths" in d:
            d["lengths"] = tuple(d["lengths"])
        if "angles" in d:
            d["angles"] = tuple(d["angles"])
        return cls(**d)


def conv_reflect(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Per-channel convolution with reflective border handling."""
    img = as_image(img)
    out = np.empty_like(img)
    for c in range(3):
        out[:, :, c] = ndi_convolve(img[:, :, c], taps, mode="reflect")
    return out


def conv_zero(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Per-channel convolution with zero-padded borders (degradation model)."""
    img = as_image(img)
    out = np.empty_like(img)
    for c in range(3):
        out[:, :, c] = convolve2d(img[:, :, c], taps, mode="same", boundary="fill")
    return out


def richardson_lucy(blurry, kernel: MotionKernel, iterations: int = 30, init=None) -> np.ndarray:
    """Multiplicative RL deconvolution; intensities stay non-negative."""
    blurry = np.clip(as_image(blurry), 0.0, None)
    taps = kernel.taps
    flipped = taps[::-1, ::-1]
    x = np.clip(as_image(init), _EPS, None) if init is not None else np.clip(blurry, _EPS, None)
    for _ in range(iterations):
        denom = conv_reflect(x, taps)
        ratio = blurry / np.maximum(denom, _EPS)
        x = x * conv_reflect(ratio, flipped)
    return x


def wiener(blurry, kernel: MotionKernel, nsr: float = 0.01) -> np.ndarray:
    """Frequency-domain Wiener deconvolution with reflective padding."""
    blurry = as_image(blurry)
    pad = kernel.length
    padded = np.pad(blurry, ((pad, pad), (pad, pad), (0, 0)), mode="reflect")
    h, w = padded.shape[:2]
    psf = np.zeros((h, w))
    kh, kw = kernel.taps.shape
    psf[:kh, :kw] = kernel.taps
    psf = np.roll(psf, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    otf = np.fft.rfft2(psf)
    filt = np.conj(otf) / (np.abs(otf) ** 2 + nsr)
    out = np.empty_like(padded)
    for c in range(3):
        out[:, :, c] = np.fft.irfft2(np.fft.rfft2(padded[:, :, c]) * filt, s=(h, w))
    return out[pad:-pad, pad:-pad, :]


def sharpness(img) -> float:
    """Mean gradient magnitude."""
    img = as_image(img)
    gy, gx = np.gradient(img, axis=(0, 1))
    return float(np.mean(np.sqrt(gx * gx + gy * gy)))


# Below this similarity the blurry image's spectrum shows no candidate's
# zero pattern and the input is treated as already sharp (delta kernel).
BLIND_MATCH_THRESHOLD = 0.45


def _whiten_log_spectrum(log_power: np.ndarray) -> np.ndarray:
    """Remove the radially averaged component of a log power spectrum.

    What remains is the anisotropic structure (the directional zero lines a
    motion kernel imprints); an isotropic natural-image falloff maps to
    roughly zero, so sharp inputs correlate with no motion kernel.
    """
    h, w = log_power.shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    r = np.sqrt(fx * fx + fy * fy)
    n_bins = 2 * max(h, w)
    bins = np.minimum((r * n_bins).astype(int), n_bins)
    counts = np.bincount(bins.ravel(), minlength=n_bins + 1)
    sums = np.bincount(bins.ravel(), weights=log_power.ravel(), minlength=n_bins + 1)
    radial_mean = sums / np.maximum(counts, 1)
    return log_power - radial_mean[bins]


def _kernel_otf_log_power(kernel: MotionKernel, shape: tuple) -> np.ndarray:
    h, w = shape
    psf = np.zeros((h, w))
    kh, kw = kernel.taps.shape
    psf[:kh, :kw] = kernel.taps
    psf = np.roll(psf, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.log(np.abs(np.fft.fft2(psf)) ** 2 + _EPS)


def spectral_match_scores(blurry, grid: list) -> list:
    """Cosine similarity between image and kernel whitened log spectra.

    Returns [(score, kernel)] in grid order. Scores are in [-1, 1]; a delta
    kernel has a flat spectrum and scores exactly 0.
    """
    blurry = as_image(blurry)
    h, w = blurry.shape[:2]
    window = np.outer(np.hanning(h), np.hanning(w))
    gray = blurry.mean(axis=2)
    spectrum = np.fft.fft2((gray - gray.mean()) * window)
    lb = _whiten_log_spectrum(np.log(np.abs(spectrum) ** 2 + _EPS))
    lb_norm = float(np.linalg.norm(lb))
    scores = []
    for kernel in grid:
        lk = _whiten_log_spectrum(_kernel_otf_log_power(kernel, (h, w)))
        denom = lb_norm * float(np.linalg.norm(lk))
        score = float(np.sum(lb * lk) / denom) if denom > _EPS else 0.0
        scores.append((score, kernel))
    return scores


def select_kernel_blind(blurry, grid: list) -> MotionKernel:
    """Kernel whose transfer-function zeros best match the image spectrum.

    Falls back to the delta kernel when no candidate's pattern is present,
    i.e. the input is already sharp. Ties keep grid order.
    """
    best = None
    for score, kernel in spectral_match_scores(blurry, grid):
        if best is None or score > best[0]:
            best = (score, kernel)
    if best[0] < BLIND_MATCH_THRESHOLD:
        return MotionKernel.make(1, 0.0)
    return best[1]


def _deconvolve(blurry, kernel: MotionKernel, stage: DeblurStage, init=None) -> np.ndarray:
    if kernel.length == 1:
        return as_image(blurry).copy()
    if stage.kind == "wiener":
        return wiener(blurry, kernel, stage.wiener_nsr)
    return richardson_lucy(blurry, kernel, stage.rl_iterations, init=init)


def initial_deblur(blurry, stage: DeblurStage) -> np.ndarray:
    """Blind deblur: identify the kernel spectrally, then deconvolve."""
    stage.validate()
    blurry = as_image(blurry)
    if stage.kind == "identity":
        return blurry.copy()
    if stage.kind == "external":
        return apply_external(blurry, None, stage.external_command)
    kernel = select_kernel_blind(blurry, stage.grid())
    return _deconvolve(blurry, kernel, stage)


def select_kernel_by_refit(prior, blurry, grid: list) -> MotionKernel:
    """Kernel minimizing ||conv(prior, k) - blurry||^2; ties keep grid order."""
    best = None
    for kernel in grid:
        reblurred = conv_reflect(prior, kernel.taps)
        residual = float(np.sum((reblurred - blurry) ** 2))
        if best is None or residual < best[0]:
            best = (residual, kernel)
    return best[1]


def guided_deblur(blurry, prior, stage: DeblurStage) -> np.ndarray:
    """Prior-guided deblur: the prior identifies the kernel and seeds RL.

    The output is always a deconvolution of `blurry`; the prior only guides.
    """
    stage.validate()
    blurry, prior = as_image(blurry), as_image(prior)
    if blurry.shape != prior.shape:
        raise ImageError(f"image dimension mismatch: {blurry.shape} vs {prior.shape}")
    if stage.kind == "identity":
        return blurry.copy()
    if stage.kind == "external":
        return apply_external(blurry, prior, stage.external_command)
    kernel = select_kernel_by_refit(prior, blurry, stage.grid())
    return _deconvolve(blurry, kernel, stage, init=prior)


def apply_external(img, prior, command_template: str) -> np.ndarray:
    """Run an external deblurrer over PNG files in a private temp dir.

    The template must contain {in} and {out}; {prior} is substituted when a
    prior image is supplied.
    """
    if "{in}" not in command_template or "{out}" not in command_template:
        raise ExternalStageError("external command template needs {in} and {out} placeholders")
    img = as_image(img)
    with tempfile.TemporaryDirectory(prefix="darksplat-deblur-") as tmp:
        tmp = Path(tmp)
        in_path = tmp / "in.png"
        out_path = tmp / "out.png"
        write_image(in_path, img)
        subst = {"in": str(in_path), "out": str(out_path)}
        if prior is not None:
            prior_path = tmp / "prior.png"
            write_image(prior_path, as_image(prior))
            subst["prior"] = str(prior_path)
        try:
            cmd = command_template.format(**subst)
        except KeyError as e:
            raise ExternalStageError(f"unresolved placeholder {e} in external command") from e
        try:
            proc = subprocess.run(shlex.split(cmd), capture_output=True)
        except OSError as e:
            raise ExternalStageError(f"failed to launch external deblurrer: {e}") from e
        if proc.returncode != 0:
            raise ExternalStageError(
                f"external deblurrer exited with status {proc.returncode}: "
                f"{proc.stderr.decode(errors='replace').strip()}"
            )
        if not out_path.exists():
            raise ExternalStageError("external deblurrer produced no output file")
        out = read_image(out_path)
    if out.shape != img.shape:
        raise ExternalStageError(
            f"external output dimensions {out.shape} do not match input {img.shape}"
        )
    return out

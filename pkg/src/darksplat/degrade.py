"""Synthetic degradation harness.

Generates multi-view datasets with known ground truth: render a scene,
then apply motion blur, darkening, and heteroscedastic sensor noise in
that fixed order (shake during exposure, then gain, then readout).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import splatter
from .deblur import MotionKernel, conv_zero
from .imagekit import as_image, write_image
from .splatter import Camera, GaussianCloud


class DegradeError(ValueError):
    pass


@dataclass(frozen=True)
class DegradeConfig:
    darken_gain: float = 0.25  # inverted by enhance alpha = 4^1.25 - 1
    darken_gamma: float = 1.25  # inverted by enhance gamma = 0.8
    shot_noise_scale: float = 0.0005
    read_noise_sigma: float = 0.01
    blur_length: int = 5
    blur_angle: float = 0.0
    jitter_blur_angle: bool = False
    seed: int = 0

    def validate(self) -> "DegradeConfig":
        if not (0.0 < self.darken_gain <= 1.0):
            raise DegradeError(f"darken gain {self.darken_gain} outside (0, 1]")
        if self.darken_gamma < 1.0:
            raise DegradeError(f"darken gamma {self.darken_gamma} must be >= 1")
        if self.shot_noise_scale < 0 or self.read_noise_sigma < 0:
            raise DegradeError("noise parameters must be non-negative")
        if self.blur_length < 1 or self.blur_length % 2 == 0:
            raise DegradeError(f"blur length {self.blur_length} must be odd and >= 1")
        return self

    def as_dict(self) -> dict:
        return {
            "darken_gain": self.darken_gain,
            "darken_gamma": self.darken_gamma,
            "shot_noise_scale": self.shot_noise_scale,
            "read_noise_sigma": self.read_noise_sigma,
            "blur_length": self.blur_length,
            "blur_angle": self.blur_angle,
            "jitter_blur_angle": self.jitter_blur_angle,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DegradeConfig":
        return cls(**d)


def darken(img, gain: float, gamma: float) -> np.ndarray:
    """v -> (gain * v) ** gamma, clamped; approximate inverse of enhance."""
    if not (0.0 < gain <= 1.0):
        raise DegradeError(f"gain {gain} outside (0, 1]")
    if gamma < 1.0:
        raise DegradeError(f"gamma {gamma} must be >= 1")
    img = as_image(img)
    return np.clip(np.power(gain * np.clip(img, 0.0, None), gamma), 0.0, 1.0)


def add_noise(img, cfg: DegradeConfig, rng=None) -> np.ndarray:
    """Signal-dependent Gaussian noise: variance = shot * v + read^2."""
    cfg.validate()
    img = as_image(img)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if cfg.shot_noise_scale == 0.0 and cfg.read_noise_sigma == 0.0:
        return img.copy()
    var = cfg.shot_noise_scale * np.clip(img, 0.0, None) + cfg.read_noise_sigma**2
    noisy = img + rng.standard_normal(img.shape) * np.sqrt(var)
    return np.clip(noisy, 0.0, 1.0)


def motion_blur(img, length: int, angle: float) -> np.ndarray:
    """Linear-motion blur with a unit-mass kernel and zero-padded borders."""
    if length % 2 == 0:
        raise DegradeError(f"blur length must be odd, got {length}")
    img = as_image(img)
    if length == 1:
        return img.copy()
    return conv_zero(img, MotionKernel.make(length, angle).taps)


def degrade_view(clean, cfg: DegradeConfig, view_index: int = 0) -> np.ndarray:
    """Fixed pipeline blur -> darken -> noise for one view.

    Randomness derives from (seed, view_index), so parallel generation and
    serial generation agree bit for bit.
    """
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, view_index]))
    angle = cfg.blur_angle
    if cfg.jitter_blur_angle:
        angle = float(rng.uniform(0.0, 180.0))
    img = motion_blur(clean, cfg.blur_length, angle)
    img = darken(img, cfg.darken_gain, cfg.darken_gamma)
    return add_noise(img, cfg, rng=rng)


def make_dataset(
    gt_cloud: GaussianCloud,
    cameras: list,
    cfg: DegradeConfig,
    out_dir,
    holdout: int = 0,
) -> dict:
    """Render, degrade and write a dataset; returns the parsed manifest.

    Layout: clean/####.png, degraded/####.png, cameras.json, manifest.json.
    The last `holdout` cameras are marked as evaluation-only views.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    (out_dir / "clean").mkdir(parents=True, exist_ok=True)
    (out_dir / "degraded").mkdir(parents=True, exist_ok=True)
    n = len(cameras)
    if holdout < 0 or holdout >= n:
        raise DegradeError(f"holdout {holdout} must be in [0, {n})")
    for i, cam in enumerate(cameras):
        clean = np.clip(splatter.render(gt_cloud, cam), 0.0, 1.0)
        write_image(out_dir / "clean" / f"{i:04d}.png", clean)
        write_image(out_dir / "degraded" / f"{i:04d}.png", degrade_view(clean, cfg, i))
    with open(out_dir / "cameras.json", "w") as f:
        json.dump([cam.as_dict() for cam in cameras], f, indent=1)
    manifest = {
        "views": [{"clean": f"clean/{i:04d}.png", "degraded": f"degraded/{i:04d}.png"} for i in range(n)],
        "train_views": list(range(n - holdout)),
        "eval_views": list(range(n - holdout, n)),
        "degrade": cfg.as_dict(),
        "seed": cfg.seed,
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest


def load_cameras(path) -> list:
    with open(path) as f:
        return [Camera.from_dict(d) for d in json.load(f)]

"""Built-in toy scenes and camera rigs for the synthetic benchmark."""

from __future__ import annotations

import numpy as np

from .splatter import Camera, GaussianCloud, inverse_sigmoid


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Camera:
    """(R, T) world-to-camera pose looking from eye to target (x right, y down, z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    z = target - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.stack([x, y, z], axis=0)
    return r, -r @ eye


def ring_cameras(
    n: int,
    radius: float = 3.5,
    height: float = 1.2,
    image_size: int = 64,
    focal: float = 70.0,
    target=(0.0, 0.0, 0.0),
) -> list:
    """Evenly spaced cameras on a ring, all looking at the target point."""
    cams = []
    c = (image_size - 1) / 2.0
    for i in range(n):
        phi = 2.0 * np.pi * i / n
        eye = (radius * np.cos(phi), radius * np.sin(phi), height)
        r, t = look_at(eye, target)
        cams.append(
            Camera(rotation=r, translation=t, fx=focal, fy=focal, cx=c, cy=c,
                   width=image_size, height=image_size)
        )
    return cams


def toy_spheres_cloud(seed: int = 7) -> GaussianCloud:
    """Three colored Gaussian blobs over a dim ground slab; ~120 primitives."""
    rng = np.random.default_rng(seed)
    centers = np.array([[-0.55, 0.0, 0.1], [0.5, 0.25, 0.0], [0.0, -0.45, 0.35]])
    radii = (0.32, 0.28, 0.24)
    base_colors = np.array([[0.85, 0.3, 0.25], [0.25, 0.8, 0.35], [0.3, 0.4, 0.85]])
    positions, colors = [], []
    for center, radius, color in zip(centers, radii, base_colors):
        for _ in range(34):
            v = rng.standard_normal(3)
            v /= np.linalg.norm(v)
            positions.append(center + radius * v * rng.uniform(0.75, 1.0))
            colors.append(np.clip(color + rng.uniform(-0.08, 0.08, 3), 0.0, 1.0))
    # ground slab
    for _ in range(18):
        positions.append([rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), -0.45])
        colors.append(np.clip(np.array([0.45, 0.42, 0.38]) + rng.uniform(-0.05, 0.05, 3), 0.0, 1.0))
    k = len(positions)
    quats = rng.standard_normal((k, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return GaussianCloud(
        positions=np.array(positions),
        log_scales=rng.uniform(np.log(0.06), np.log(0.12), (k, 3)),
        rotations=quats,
        opacity_logits=np.full(k, inverse_sigmoid(0.75)),
        colors=np.array(colors),
        background=np.full(3, 0.06),
    )


BUILTIN_SCENES = {"toy-spheres": toy_spheres_cloud}


def builtin_scene(name: str, n_views: int = 10, image_size: int = 64):
    """(ground-truth cloud, cameras) for a named built-in scene."""
    if name not in BUILTIN_SCENES:
        raise KeyError(f"unknown built-in scene {name!r}; have {sorted(BUILTIN_SCENES)}")
    cloud = BUILTIN_SCENES[name]()
    cams = ring_cameras(n_views, image_size=image_size)
    return cloud, cams

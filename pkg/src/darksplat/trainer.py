"""Joint training of the splat cloud and noise MLP.

Loss is (1 - lambda) * L1 + lambda * (1 - SSIM) between the composed
prediction and the supervision view. Both parameter sets are updated with
Adam; the MLP learning rate decays exponentially per epoch. Scheduling is
round-robin over views so runs are deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import imagekit, noisefield, splatter
from .imagekit import ImageError, as_image
from .noisefield import NoiseMLP
from .splatter import Camera, GaussianCloud

DEFAULT_SPLAT_LRS = {
    "positions": 1.6e-4,
    "log_scales": 5e-3,
    "rotations": 1e-3,
    "opacity_logits": 5e-2,
    "colors": 2.5e-3,
}


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, value: float):
        super().__init__(f"non-finite loss {value} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.2
    iterations: int = 2000
    mlp_lr: float = 1e-4
    mlp_lr_decay: float = 0.95
    splat_lrs: dict = field(default_factory=lambda: dict(DEFAULT_SPLAT_LRS))
    seed: int = 0
    epoch_length: int = 0  # 0 = number of training views

    def validate(self) -> "TrainConfig":
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError(f"lambda {self.lam} outside [0, 1]")
        if self.mlp_lr <= 0 or any(lr <= 0 for lr in self.splat_lrs.values()):
            raise ValueError("learning rates must be positive")
        return self

    def as_dict(self) -> dict:
        return {
            "lam": self.lam,
            "iterations": self.iterations,
            "mlp_lr": self.mlp_lr,
            "mlp_lr_decay": self.mlp_lr_decay,
            "splat_lrs": dict(self.splat_lrs),
            "seed": self.seed,
            "epoch_length": self.epoch_length,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainView:
    image: np.ndarray
    camera: Camera

    def __post_init__(self):
        self.image = as_image(self.image)
        if self.image.shape[:2] != (self.camera.height, self.camera.width):
            raise ImageError("view image dimensions do not match its camera")


def loss(pred, gt, lam: float):
    """Reconstruction loss value and its analytic gradient w.r.t. pred."""
    pred, gt = as_image(pred), as_image(gt)
    if pred.shape != gt.shape:
        raise ImageError(f"image dimension mismatch: {pred.shape} vs {gt.shape}")
    diff = pred - gt
    n = diff.size
    l1 = float(np.mean(np.abs(diff)))
    ssim_val, ssim_grad = imagekit.ssim_and_grad(pred, gt)
    value = (1.0 - lam) * l1 + lam * (1.0 - ssim_val)
    grad = (1.0 - lam) * np.sign(diff) / n - lam * ssim_grad
    return value, grad


class AdamState:
    """Per-parameter-tensor Adam moments (beta1=0.9, beta2=0.999, eps=1e-8)."""

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0


def adam_step(params: dict, grads: dict, state: AdamState, lrs) -> None:
    """In-place Adam update. `lrs` is a float or a per-key dict."""
    state.t += 1
    t = state.t
    b1, b2, eps = AdamState.BETA1, AdamState.BETA2, AdamState.EPS
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {key}: {g.shape} vs {p.shape}")
        lr = lrs[key] if isinstance(lrs, dict) else lrs
        if key not in state.m:
            state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
        m = state.m[key]
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


def train(
    cloud: GaussianCloud,
    mlp: NoiseMLP,
    views: list,
    cfg: TrainConfig,
    ne_enabled: bool = True,
):
    """Optimize cloud (and MLP, when enabled) against the supervision views.

    Returns (cloud, mlp, history). Inputs are updated in place on copies:
    the returned objects are fresh, the arguments are left untouched.
    With `ne_enabled` false the MLP is frozen and the prediction is the raw
    render, which reproduces splat-only training bit for bit when the MLP
    output is zero.
    """
    cfg.validate()
    if not views:
        raise ValueError("need at least one training view")
    cloud = cloud.copy()
    mlp = mlp.copy()
    history = []
    if cfg.iterations <= 0:
        return cloud, mlp, history

    epoch_length = cfg.epoch_length if cfg.epoch_length > 0 else len(views)
    splat_state = AdamState()
    mlp_state = AdamState()
    mlp_lr = cfg.mlp_lr
    features = (
        [noisefield.view_features(v.camera, mlp.sample_depth) for v in views]
        if ne_enabled
        else None
    )

    for it in range(cfg.iterations):
        if it > 0 and it % epoch_length == 0:
            mlp_lr *= cfg.mlp_lr_decay
        vi = it % len(views)
        view = views[vi]
        rendered, cache = splatter.render_with_cache(cloud, view.camera)
        if ne_enabled:
            noise = noisefield.noise_map(mlp, view.camera, features=features[vi])
            pred = noisefield.compose(noise, rendered)
        else:
            pred = rendered
        value, grad = loss(pred, view.image, cfg.lam)
        if not np.isfinite(value):
            raise TrainingDiverged(it, value)
        history.append(value)
        splat_grads = splatter.render_backward(cloud, view.camera, grad, cache=cache)
        adam_step(cloud.params(), splat_grads, splat_state, cfg.splat_lrs)
        if ne_enabled:
            mlp_grads = noisefield.mlp_backward(mlp, view.camera, grad, features=features[vi])
            adam_step(mlp.params(), mlp_grads, mlp_state, mlp_lr)
    return cloud, mlp, history


def render_views(cloud: GaussianCloud, mlp, cameras: list, include_noise: bool = False):
    """Clamped renders for a list of cameras.

    The noise map is an explanatory channel absorbed during training; final
    outputs exclude it unless explicitly requested.
    """
    out = []
    for cam in cameras:
        img = splatter.render(cloud, cam)
        if include_noise and mlp is not None:
            img = noisefield.compose(noisefield.noise_map(mlp, cam), img)
        out.append(np.clip(img, 0.0, 1.0))
    return out

"""Two-parameter low-light enhancement and the logarithmic anchor schedule.

The enhancement curve is E(v) = clamp(((1 + alpha) * v) ** gamma, 0, 1):
alpha is a brightening gain, gamma a tone-curve exponent. A sequence of
parameter pairs interpolated in log space defines progressively brighter
versions ("anchors") of the same low-light input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imagekit import as_image

ALPHA_MIN, ALPHA_MAX = 0.0, 15.0
GAMMA_MIN, GAMMA_MAX = 0.3, 1.0


class EnhanceError(ValueError):
    """Raised for out-of-bounds enhancement parameters."""


@dataclass(frozen=True)
class EnhanceParams:
    alpha: float
    gamma: float

    def validate(self) -> "EnhanceParams":
        if not (ALPHA_MIN <= self.alpha <= ALPHA_MAX):
            raise EnhanceError(f"alpha {self.alpha} outside [{ALPHA_MIN}, {ALPHA_MAX}]")
        if not (GAMMA_MIN <= self.gamma <= GAMMA_MAX):
            raise EnhanceError(f"gamma {self.gamma} outside [{GAMMA_MIN}, {GAMMA_MAX}]")
        return self

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d: dict) -> "EnhanceParams":
        return cls(float(d["alpha"]), float(d["gamma"]))


def enhance(img, p: EnhanceParams, equalize_first: bool = False) -> np.ndarray:
    """Apply the gain-then-gamma curve per channel and pixel.

    `equalize_first` optionally applies global histogram equalization before
    the parametric curve; it is off by default and not part of the searched
    parameter space.
    """
    img = as_image(img)
    p.validate()
    if equalize_first:
        img = equalize(img)
    v = np.clip(img, 0.0, None)
    out = np.power((1.0 + p.alpha) * v, p.gamma)
    return np.clip(out, 0.0, 1.0)


def equalize(img) -> np.ndarray:
    """Global per-channel histogram equalization on the 256-level grid."""
    img = as_image(img)
    out = np.empty_like(img)
    n = img.shape[0] * img.shape[1]
    for c in range(3):
        q = np.minimum((np.clip(img[:, :, c], 0.0, 1.0) * 256).astype(np.int64), 255)
        cdf = np.cumsum(np.bincount(q.ravel(), minlength=256)) / n
        out[:, :, c] = cdf[q]
    return out


def log_interpolate(p0: EnhanceParams, pn: EnhanceParams, n: int) -> list[EnhanceParams]:
    """n parameter pairs on the log-space path from p0 to pn.

    Entry i (1-based) sits at fraction i/n of the path, so the last entry
    equals pn up to floating-point rounding.
    """
    if n < 1:
        raise EnhanceError(f"need at least 1 interpolation step, got {n}")
    if p0.alpha <= 0.0 or pn.alpha <= 0.0:
        raise EnhanceError("log interpolation requires strictly positive alpha endpoints")
    la0, lan = math.log(p0.alpha), math.log(pn.alpha)
    lg0, lgn = math.log(p0.gamma), math.log(pn.gamma)
    out = []
    for i in range(1, n + 1):
        if i == n:  # endpoint exact, immune to rounding in the log path
            out.append(EnhanceParams(pn.alpha, pn.gamma))
            continue
        t = i / n
        out.append(
            EnhanceParams(
                alpha=math.exp(la0 + t * (lan - la0)),
                gamma=math.exp(lg0 + t * (lgn - lg0)),
            )
        )
    return out


def make_anchors(low, p0: EnhanceParams, pn: EnhanceParams, n: int) -> list[np.ndarray]:
    """Enhance the low-light input at each interpolated parameter pair."""
    low = as_image(low)
    return [enhance(low, p) for p in log_interpolate(p0, pn, n)]

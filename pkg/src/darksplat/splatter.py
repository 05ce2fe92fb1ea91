"""Differentiable Gaussian-splatting renderer.

Anisotropic 3D Gaussians are projected through a pinhole camera with the
EWA covariance mapping (cov2d = J W Sigma W^T J^T plus a fixed screen-space
dilation), depth-sorted globally per image, and alpha-composited front to
back. `render_backward` produces exact analytic gradients for every
primitive parameter; a splat culled behind the camera or skipped below the
alpha floor contributes zero gradient.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

Z_NEAR = 0.01
COV2D_DILATION = 0.3  # px^2 isotropic low-pass added after projection
ALPHA_CLAMP = 0.99
ALPHA_FLOOR = 1.0 / 255.0

CLOUD_MAGIC = b"FGSC"
CLOUD_VERSION = 1


class SplatterError(ValueError):
    pass


@dataclass
class Camera:
    rotation: np.ndarray  # 3x3 world-to-camera
    translation: np.ndarray  # 3-vector
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        r = self.rotation
        if abs(np.linalg.det(r) - 1.0) > 1e-6 or np.abs(r.T @ r - np.eye(3)).max() > 1e-6:
            raise SplatterError("camera rotation is not orthonormal")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def as_dict(self) -> dict:
        return {
            "R": [float(v) for v in self.rotation.ravel()],
            "T": [float(v) for v in self.translation],
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            rotation=np.array(d["R"], dtype=np.float64).reshape(3, 3),
            translation=np.array(d["T"], dtype=np.float64),
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


@dataclass
class Gaussian3D:
    position: np.ndarray  # (3,)
    log_scale: np.ndarray  # (3,); per-axis scale = exp(log_scale)
    rotation: np.ndarray  # quaternion (w, x, y, z)
    opacity_logit: float
    color: np.ndarray  # (3,), clamped to [0,1] at composite time


@dataclass
class GaussianCloud:
    """Struct-of-arrays container for K Gaussians plus a background color."""

    positions: np.ndarray  # (K, 3)
    log_scales: np.ndarray  # (K, 3)
    rotations: np.ndarray  # (K, 4) quaternions (w, x, y, z)
    opacity_logits: np.ndarray  # (K,)
    colors: np.ndarray  # (K, 3)
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        k = len(self.positions)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(k, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(k, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(k)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(k, 3)
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> Gaussian3D:
        return Gaussian3D(
            position=self.positions[i],
            log_scale=self.log_scales[i],
            rotation=self.rotations[i],
            opacity_logit=float(self.opacity_logits[i]),
            color=self.colors[i],
        )

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.positions.copy(),
            self.log_scales.copy(),
            self.rotations.copy(),
            self.opacity_logits.copy(),
            self.colors.copy(),
            self.background.copy(),
        )

    def params(self) -> dict:
        """Mutable parameter tensors keyed by optimizer group name."""
        return {
            "positions": self.positions,
            "log_scales": self.log_scales,
            "rotations": self.rotations,
            "opacity_logits": self.opacity_logits,
            "colors": self.colors,
        }

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params().items()}


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def inverse_sigmoid(y: float) -> float:
    return float(np.log(y / (1.0 - y)))


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a (renormalized) quaternion (w, x, y, z)."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _rot_grad_wrt_quat(q_raw: np.ndarray, g_rot: np.ndarray) -> np.ndarray:
    """Backprop a dL/dR (3x3) to the raw (unnormalized) quaternion."""
    q_raw = np.asarray(q_raw, dtype=np.float64)
    norm = np.linalg.norm(q_raw)
    q = q_raw / norm
    w, x, y, z = q
    dR_dw = 2.0 * np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]], dtype=np.float64)
    dR_dx = 2.0 * np.array([[0, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dR_dy = 2.0 * np.array([[-2 * y, x, w], [x, 0, z], [-w, z, -2 * y]])
    dR_dz = 2.0 * np.array([[-2 * z, -w, x], [w, -2 * z, y], [x, y, 0]])
    g_unit = np.array(
        [np.sum(g_rot * dR_dw), np.sum(g_rot * dR_dx), np.sum(g_rot * dR_dy), np.sum(g_rot * dR_dz)]
    )
    # through normalization: dq/dq_raw = (I - q q^T) / |q_raw|
    return (g_unit - q * float(q @ g_unit)) / norm


def world_covariance(log_scale: np.ndarray, quat: np.ndarray) -> np.ndarray:
    """Sigma = R S S^T R^T; symmetric positive definite by construction."""
    rq = quat_to_rot(quat)
    s = np.exp(np.asarray(log_scale, dtype=np.float64))
    b = rq * s[None, :]
    return b @ b.T


def project(g: Gaussian3D, cam: Camera):
    """Project one Gaussian; returns (mean2d, cov2d, depth) or None when culled."""
    t = cam.rotation @ np.asarray(g.position, dtype=np.float64) + cam.translation
    if t[2] <= Z_NEAR:
        return None
    tx, ty, tz = t
    mean2d = np.array([cam.fx * tx / tz + cam.cx, cam.fy * ty / tz + cam.cy])
    jac = np.array(
        [
            [cam.fx / tz, 0.0, -cam.fx * tx / (tz * tz)],
            [0.0, cam.fy / tz, -cam.fy * ty / (tz * tz)],
        ]
    )
    sigma = world_covariance(g.log_scale, g.rotation)
    m = cam.rotation @ sigma @ cam.rotation.T
    cov2d = jac @ m @ jac.T + COV2D_DILATION * np.eye(2)
    cov2d = 0.5 * (cov2d + cov2d.T)
    return mean2d, cov2d, float(tz)


def _splat_footprint(mean2d, cov2d, opacity, width, height):
    """Pixel bounding box outside which alpha is provably below the floor."""
    if opacity <= ALPHA_FLOOR:
        return None
    lam_max = float(np.linalg.eigvalsh(cov2d)[-1])
    r = np.sqrt(max(2.0 * lam_max * np.log(opacity / ALPHA_FLOOR), 0.0)) + 1.0
    x0 = max(int(np.floor(mean2d[0] - r)), 0)
    x1 = min(int(np.ceil(mean2d[0] + r)) + 1, width)
    y0 = max(int(np.floor(mean2d[1] - r)), 0)
    y1 = min(int(np.ceil(mean2d[1] + r)) + 1, height)
    if x0 >= x1 or y0 >= y1:
        return None
    return x0, x1, y0, y1


def _forward(cloud: GaussianCloud, cam: Camera, save: bool):
    if len(cloud) == 0:
        raise SplatterError("cannot render an empty cloud")
    h, w = cam.height, cam.width
    image = np.zeros((h, w, 3))
    transmittance = np.ones((h, w))
    saved = []

    projected = []
    for k in range(len(cloud)):
        pr = project(cloud[k], cam)
        if pr is not None:
            projected.append((pr[2], k, pr[0], pr[1]))
    projected.sort(key=lambda e: (e[0], e[1]))

    for depth, k, mean2d, cov2d in projected:
        opacity = float(sigmoid(cloud.opacity_logits[k]))
        box = _splat_footprint(mean2d, cov2d, opacity, w, h)
        if box is None:
            continue
        x0, x1, y0, y1 = box
        xs = np.arange(x0, x1, dtype=np.float64) - mean2d[0]
        ys = np.arange(y0, y1, dtype=np.float64) - mean2d[1]
        dx = xs[None, :]
        dy = ys[:, None]
        conic = np.linalg.inv(cov2d)
        q = conic[0, 0] * dx * dx + 2.0 * conic[0, 1] * dx * dy + conic[1, 1] * dy * dy
        gauss = np.exp(-0.5 * q)
        alpha_raw = opacity * gauss
        alpha = np.minimum(alpha_raw, ALPHA_CLAMP)
        alpha = np.where(alpha < ALPHA_FLOOR, 0.0, alpha)
        if not np.any(alpha):
            continue
        t_before = transmittance[y0:y1, x0:x1].copy()
        weight = alpha * t_before
        color = np.clip(cloud.colors[k], 0.0, 1.0)
        image[y0:y1, x0:x1] += weight[:, :, None] * color[None, None, :]
        transmittance[y0:y1, x0:x1] = t_before * (1.0 - alpha)
        if save:
            saved.append(
                {
                    "k": k,
                    "box": box,
                    "mean2d": mean2d,
                    "cov2d": cov2d,
                    "conic": conic,
                    "opacity": opacity,
                    "gauss": gauss,
                    "alpha_raw": alpha_raw,
                    "alpha": alpha,
                    "t_before": t_before,
                    "dx": dx,
                    "dy": dy,
                }
            )
    image += transmittance[:, :, None] * cloud.background[None, None, :]
    return image, transmittance, saved


def render(cloud: GaussianCloud, cam: Camera) -> np.ndarray:
    """Front-to-back composited image; deterministic for fixed inputs."""
    image, _, _ = _forward(cloud, cam, save=False)
    return image


def render_with_cache(cloud: GaussianCloud, cam: Camera):
    """Render plus the compositing state reusable by render_backward."""
    image, t_final, saved = _forward(cloud, cam, save=True)
    return image, (t_final, saved)


def render_backward(
    cloud: GaussianCloud, cam: Camera, upstream_grad: np.ndarray, cache=None
) -> dict:
    """Analytic gradients of sum(upstream_grad * render(cloud, cam)).

    Returns a dict shaped like cloud.params(). Recomputes the forward pass
    internally unless a cache from render_with_cache is supplied.
    """
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if upstream_grad.shape != (cam.height, cam.width, 3):
        raise SplatterError("upstream gradient shape does not match the camera raster")
    if cache is None:
        _, t_final, saved = _forward(cloud, cam, save=True)
    else:
        t_final, saved = cache
    grads = cloud.zero_grads()

    # accum(px) = sum over splats behind the current one of color * alpha * T,
    # plus the background term; maintained while walking splats back to front.
    accum = t_final[:, :, None] * cloud.background[None, None, :]

    w2c = cam.rotation
    for entry in reversed(saved):
        k = entry["k"]
        x0, x1, y0, y1 = entry["box"]
        up = upstream_grad[y0:y1, x0:x1, :]
        alpha = entry["alpha"]
        t_before = entry["t_before"]
        color = cloud.colors[k]
        color_c = np.clip(color, 0.0, 1.0)

        weight = alpha * t_before
        # color gradient (through the composite-time clamp)
        g_color = np.einsum("ijc,ij->c", up, weight)
        pass_mask = (color > 0.0) & (color < 1.0)
        grads["colors"][k] += np.where(pass_mask, g_color, 0.0)

        # alpha gradient: own contribution minus everything it occludes
        acc_box = accum[y0:y1, x0:x1, :]
        one_minus = 1.0 - alpha
        g_alpha = np.einsum(
            "ijc,ijc->ij",
            up,
            t_before[:, :, None] * color_c[None, None, :] - acc_box / one_minus[:, :, None],
        )
        # update accum before chaining further (uses this splat's contribution)
        accum[y0:y1, x0:x1, :] = acc_box + weight[:, :, None] * color_c[None, None, :]

        # chain through floor skip and ALPHA_CLAMP
        live = (alpha > 0.0) & (entry["alpha_raw"] < ALPHA_CLAMP)
        g_alpha = np.where(live, g_alpha, 0.0)

        opacity = entry["opacity"]
        gauss = entry["gauss"]
        g_opacity = float(np.sum(g_alpha * gauss))
        grads["opacity_logits"][k] += g_opacity * opacity * (1.0 - opacity)

        g_gauss = g_alpha * opacity
        g_q = -0.5 * g_gauss * gauss
        conic = entry["conic"]
        dx, dy = entry["dx"], entry["dy"]
        qx = conic[0, 0] * dx + conic[0, 1] * dy  # d(q)/d(dx) / 2
        qy = conic[0, 1] * dx + conic[1, 1] * dy
        # delta = pixel - mean2d, so d/dmean2d = -d/ddelta
        g_mean = np.array(
            [-2.0 * float(np.sum(g_q * qx)), -2.0 * float(np.sum(g_q * qy))]
        )
        g_conic = np.array(
            [
                [float(np.sum(g_q * dx * dx)), float(np.sum(g_q * dx * dy))],
                [float(np.sum(g_q * dx * dy)), float(np.sum(g_q * dy * dy))],
            ]
        )
        # conic = inv(cov2d)
        g_cov2d = -conic @ g_conic @ conic

        # recompute projection intermediates for this splat
        pos = cloud.positions[k]
        t = w2c @ pos + cam.translation
        tx, ty, tz = t
        jac = np.array(
            [
                [cam.fx / tz, 0.0, -cam.fx * tx / (tz * tz)],
                [0.0, cam.fy / tz, -cam.fy * ty / (tz * tz)],
            ]
        )
        rq = quat_to_rot(cloud.rotations[k])
        s = np.exp(cloud.log_scales[k])
        b = rq * s[None, :]
        sigma = b @ b.T
        m = w2c @ sigma @ w2c.T

        g_m = jac.T @ g_cov2d @ jac
        g_jac = 2.0 * g_cov2d @ jac @ m
        g_sigma = w2c.T @ g_m @ w2c
        g_b = 2.0 * g_sigma @ b
        g_rq = g_b * s[None, :]
        g_s = np.einsum("ri,ri->i", rq, g_b)
        grads["log_scales"][k] += g_s * s
        grads["rotations"][k] += _rot_grad_wrt_quat(cloud.rotations[k], g_rq)

        # camera-space point gradient: mean2d = (fx tx/tz + cx, fy ty/tz + cy)
        g_t = jac.T @ g_mean
        inv_tz2 = 1.0 / (tz * tz)
        g_t[0] += g_jac[0, 2] * (-cam.fx * inv_tz2)
        g_t[1] += g_jac[1, 2] * (-cam.fy * inv_tz2)
        g_t[2] += (
            g_jac[0, 0] * (-cam.fx * inv_tz2)
            + g_jac[1, 1] * (-cam.fy * inv_tz2)
            + g_jac[0, 2] * (2.0 * cam.fx * tx / (tz * tz * tz))
            + g_jac[1, 2] * (2.0 * cam.fy * ty / (tz * tz * tz))
        )
        grads["positions"][k] += w2c.T @ g_t
    return grads


def init_cloud(seed_points=None, count: int | None = None, seed: int = 0, box=None) -> GaussianCloud:
    """Deterministic cloud initialization from points or a random box fill.

    Initial scale is isotropic: half the mean nearest-neighbor distance when
    points are given, box diagonal / K^(1/3) when sampled randomly. Opacity
    starts at 0.1, color at mid-gray.
    """
    if box is None:
        box = (np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0]))
    lo, hi = np.asarray(box[0], dtype=np.float64), np.asarray(box[1], dtype=np.float64)
    if seed_points is not None:
        pts = np.asarray(seed_points, dtype=np.float64).reshape(-1, 3).copy()
        if len(pts) == 0:
            raise SplatterError("need at least one seed point")
        if len(pts) > 1:
            d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
            np.fill_diagonal(d2, np.inf)
            scale = 0.5 * float(np.mean(np.sqrt(d2.min(axis=1))))
        else:
            scale = float(np.linalg.norm(hi - lo)) / 2.0
    else:
        if count is None or count < 1:
            raise SplatterError("need a positive primitive count")
        rng = np.random.default_rng(seed)
        pts = lo + rng.random((count, 3)) * (hi - lo)
        scale = float(np.linalg.norm(hi - lo)) / count ** (1.0 / 3.0)
    scale = max(scale, 1e-6)
    k = len(pts)
    quats = np.zeros((k, 4))
    quats[:, 0] = 1.0
    return GaussianCloud(
        positions=pts,
        log_scales=np.full((k, 3), np.log(scale)),
        rotations=quats,
        opacity_logits=np.full(k, inverse_sigmoid(0.1)),
        colors=np.full((k, 3), 0.5),
    )


# ---------------------------------------------------------------------------
# Checkpoint segment (magic FGSC)


def cloud_to_bytes(cloud: GaussianCloud) -> bytes:
    out = [CLOUD_MAGIC, struct.pack("<II", CLOUD_VERSION, len(cloud))]
    per = np.concatenate(
        [
            cloud.positions,
            cloud.log_scales,
            cloud.rotations,
            cloud.opacity_logits[:, None],
            cloud.colors,
        ],
        axis=1,
    ).astype("<f4")
    out.append(per.tobytes())
    return b"".join(out)


def cloud_from_bytes(data: bytes, background=None) -> GaussianCloud:
    if data[:4] != CLOUD_MAGIC:
        raise SplatterError(f"bad cloud checkpoint magic {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CLOUD_VERSION:
        raise SplatterError(f"unsupported cloud checkpoint version {version}")
    need = 12 + count * 14 * 4
    if len(data) < need:
        raise SplatterError("truncated cloud checkpoint")
    per = np.frombuffer(data, dtype="<f4", count=count * 14, offset=12).reshape(count, 14)
    per = per.astype(np.float64)
    return GaussianCloud(
        positions=per[:, 0:3],
        log_scales=per[:, 3:6],
        rotations=per[:, 6:10],
        opacity_logits=per[:, 10],
        colors=per[:, 11:14],
        background=np.zeros(3) if background is None else background,
    )

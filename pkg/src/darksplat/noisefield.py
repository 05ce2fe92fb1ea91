"""Per-view noise field: a small MLP over (sample position, view direction).

One sample per pixel is taken at a fixed depth along the back-projected
pixel ray; the MLP output is a signed noise color composed additively with
the splat render. Forward and reverse passes are hand-written so gradients
stay exact and deterministic.
"""

from __future__ import annotations

import struct

import numpy as np

from .imagekit import ImageError, as_image
from .splatter import Camera

HIDDEN = 128
N_HIDDEN_LAYERS = 4
X_OCTAVES = 4
D_OCTAVES = 2
DEFAULT_SAMPLE_DEPTH = 1.0

MLP_MAGIC = b"FNMW"
MLP_VERSION = 1


def encode_input(x: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Frequency encoding: raw values plus sin/cos at power-of-two frequencies."""
    feats = [x]
    for k in range(X_OCTAVES):
        f = (2.0**k) * np.pi
        feats.append(np.sin(f * x))
        feats.append(np.cos(f * x))
    feats.append(d)
    for k in range(D_OCTAVES):
        f = (2.0**k) * np.pi
        feats.append(np.sin(f * d))
        feats.append(np.cos(f * d))
    return np.concatenate(feats, axis=-1)


INPUT_DIM = 3 * (1 + 2 * X_OCTAVES) + 3 * (1 + 2 * D_OCTAVES)


class NoiseMLP:
    """input -> 4 x (128, ReLU) -> linear 3-channel noise color.

    The output layer is zero-initialized so an untrained field is exactly
    zero and composition starts from the plain splat render.
    """

    def __init__(self, seed: int = 0, sample_depth: float = DEFAULT_SAMPLE_DEPTH):
        self.sample_depth = float(sample_depth)
        rng = np.random.default_rng(seed)
        dims = [INPUT_DIM] + [HIDDEN] * N_HIDDEN_LAYERS + [3]
        self.weights = []
        self.biases = []
        for i, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
            if i == len(dims) - 2:
                w = np.zeros((n_in, n_out))
            else:
                limit = np.sqrt(6.0 / n_in)
                w = rng.uniform(-limit, limit, size=(n_in, n_out))
            self.weights.append(w)
            self.biases.append(np.zeros(n_out))

    @property
    def layer_dims(self) -> list:
        return [w.shape[0] for w in self.weights] + [self.weights[-1].shape[1]]

    def params(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params().items()}

    def copy(self) -> "NoiseMLP":
        other = NoiseMLP.__new__(NoiseMLP)
        other.sample_depth = self.sample_depth
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def is_zero_output(self) -> bool:
        return not (np.any(self.weights[-1]) or np.any(self.biases[-1]))

    def forward(self, features: np.ndarray, keep_activations: bool = False):
        """Batched forward pass on encoded features (N, INPUT_DIM)."""
        acts = [features]
        h = features
        n_layers = len(self.weights)
        for i in range(n_layers):
            h = h @ self.weights[i] + self.biases[i]
            if i < n_layers - 1:
                h = np.maximum(h, 0.0)
            if keep_activations:
                acts.append(h)
        return (h, acts) if keep_activations else h


def sample_points(cam: Camera, sample_depth: float = DEFAULT_SAMPLE_DEPTH):
    """Per-pixel (position, direction) samples along back-projected rays.

    Directions are unit world-frame ray directions; positions sit at the
    fixed sampling depth from the camera center.
    """
    h, w = cam.height, cam.width
    xs = (np.arange(w, dtype=np.float64) - cam.cx) / cam.fx
    ys = (np.arange(h, dtype=np.float64) - cam.cy) / cam.fy
    dirs_cam = np.empty((h, w, 3))
    dirs_cam[:, :, 0] = xs[None, :]
    dirs_cam[:, :, 1] = ys[:, None]
    dirs_cam[:, :, 2] = 1.0
    dirs = dirs_cam @ cam.rotation  # == dirs_cam @ R == (R^T @ d)^T per pixel
    dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
    points = cam.center[None, None, :] + sample_depth * dirs
    return points, dirs


def view_features(cam: Camera, sample_depth: float = DEFAULT_SAMPLE_DEPTH) -> np.ndarray:
    """Encoded per-pixel MLP inputs for one camera (cacheable per view)."""
    points, dirs = sample_points(cam, sample_depth)
    return encode_input(points.reshape(-1, 3), dirs.reshape(-1, 3))


def noise_map(mlp: NoiseMLP, cam: Camera, features: np.ndarray | None = None) -> np.ndarray:
    """Render the noise field for one view; output is signed and unclamped."""
    if features is None:
        features = view_features(cam, mlp.sample_depth)
    out = mlp.forward(features)
    return out.reshape(cam.height, cam.width, 3)


def compose(noise, rendered) -> np.ndarray:
    """Element-wise addition of noise map and render, unclamped."""
    noise, rendered = as_image(noise), as_image(rendered)
    if noise.shape != rendered.shape:
        raise ImageError(f"image dimension mismatch: {noise.shape} vs {rendered.shape}")
    return noise + rendered


def mlp_backward(
    mlp: NoiseMLP, cam: Camera, upstream_grad: np.ndarray, features: np.ndarray | None = None
) -> dict:
    """Exact reverse-mode gradients of noise_map w.r.t. all MLP parameters."""
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if upstream_grad.shape != (cam.height, cam.width, 3):
        raise ImageError("upstream gradient shape does not match the camera raster")
    if features is None:
        features = view_features(cam, mlp.sample_depth)
    _, acts = mlp.forward(features, keep_activations=True)
    grads = mlp.zero_grads()
    delta = upstream_grad.reshape(-1, 3)
    n_layers = len(mlp.weights)
    for i in range(n_layers - 1, -1, -1):
        inp = acts[i]
        grads[f"w{i}"] = inp.T @ delta
        grads[f"b{i}"] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ mlp.weights[i].T) * (acts[i] > 0.0)
    return grads


# ---------------------------------------------------------------------------
# Checkpoint segment (magic FNMW)


def mlp_to_bytes(mlp: NoiseMLP) -> bytes:
    dims = mlp.layer_dims
    out = [MLP_MAGIC, struct.pack("<II", MLP_VERSION, len(dims))]
    out.append(struct.pack(f"<{len(dims)}I", *dims))
    for w, b in zip(mlp.weights, mlp.biases):
        out.append(w.astype("<f4").tobytes())
        out.append(b.astype("<f4").tobytes())
    return b"".join(out)


def mlp_from_bytes(data: bytes, sample_depth: float = DEFAULT_SAMPLE_DEPTH) -> NoiseMLP:
    if data[:4] != MLP_MAGIC:
        raise ValueError(f"bad MLP checkpoint magic {data[:4]!r}")
    version, n_dims = struct.unpack_from("<II", data, 4)
    if version != MLP_VERSION:
        raise ValueError(f"unsupported MLP checkpoint version {version}")
    dims = struct.unpack_from(f"<{n_dims}I", data, 12)
    offset = 12 + 4 * n_dims
    mlp = NoiseMLP.__new__(NoiseMLP)
    mlp.sample_depth = sample_depth
    mlp.weights, mlp.biases = [], []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(data, dtype="<f4", count=n_in * n_out, offset=offset)
        offset += n_in * n_out * 4
        b = np.frombuffer(data, dtype="<f4", count=n_out, offset=offset)
        offset += n_out * 4
        mlp.weights.append(w.reshape(n_in, n_out).astype(np.float64))
        mlp.biases.append(b.astype(np.float64))
    return mlp

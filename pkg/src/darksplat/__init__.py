"""darksplat: progressive low-light enhancement and deblurring around a
differentiable Gaussian-splatting core, with a noise-field MLP and a
synthetic degradation harness for end-to-end verification."""

__version__ = "0.1.0"

from .enhance import EnhanceParams  # noqa: F401
from .splatter import Camera, Gaussian3D, GaussianCloud  # noqa: F401

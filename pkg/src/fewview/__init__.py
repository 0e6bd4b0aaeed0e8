"""CPU-based differentiable 3D Gaussian splatting for few-shot view synthesis."""

__version__ = "0.1.0"

from .errors import FewViewError
from .geometry import CameraView, Intrinsics, Pose
from .scene import Gaussian3D, GaussianScene, load_ply, save_ply
from .renderer import RenderBuffers, render_backward, render_forward

__all__ = [
    "__version__", "FewViewError", "CameraView", "Intrinsics", "Pose",
    "Gaussian3D", "GaussianScene", "load_ply", "save_ply",
    "RenderBuffers", "render_backward", "render_forward",
]

"""Render a hand-built Gaussian scene and inspect the output buffers.

Walks through the core objects: camera intrinsics/pose, a GaussianScene,
and the forward rasterizer. Writes a PNG and prints buffer statistics.
"""

import numpy as np

from fewview.dataset import save_png
from fewview.geometry import CameraView, Intrinsics, Pose
from fewview.renderer import render_forward
from fewview.scene import GaussianScene, inverse_sigmoid
from fewview.sh import C0

# --- a camera 4 units from the origin, looking down -z toward it ----------
size = 128
intr = Intrinsics(fx=1.2 * size, fy=1.2 * size,
                  cx=(size - 1) / 2, cy=(size - 1) / 2,
                  width=size, height=size)
c2w = np.eye(4)
c2w[2, 3] = -4.0  # camera center at z = -4, +z forward
view = CameraView(intr, Pose.from_camera_to_world(c2w))

# --- three Gaussians: red sphere-ish, green disc, blue background blob ----
means = np.array([[0.0, 0.0, 0.0],
                  [0.6, 0.3, 0.5],
                  [-0.5, -0.4, 1.5]])
quats = np.tile([1.0, 0.0, 0.0, 0.0], (3, 1))
log_scales = np.log([[0.25, 0.25, 0.25],
                     [0.35, 0.35, 0.05],   # flattened along z
                     [0.5, 0.5, 0.5]])
opacity_logits = np.full(3, inverse_sigmoid(0.9))
colors = np.array([[0.9, 0.2, 0.2],
                   [0.2, 0.8, 0.3],
                   [0.25, 0.35, 0.9]])
sh = ((colors - 0.5) / C0)[:, None, :]  # DC-only spherical harmonics

scene = GaussianScene(means, quats, log_scales, opacity_logits, sh,
                      sh_degree=0, active_sh_degree=0)

buffers, _cache = render_forward(scene, view, with_contrib=True)
print(f"color  range [{buffers.color.min():.3f}, {buffers.color.max():.3f}]")
print(f"alpha  range [{buffers.alpha.min():.3f}, {buffers.alpha.max():.3f}]")
print(f"depth  at center: {buffers.depth[size // 2, size // 2]:.3f} "
      "(distance from the camera at z=-4)")
print(f"gaussians contributing on average: {buffers.contrib.mean():.2f}")

save_png("demo_render.png", np.clip(buffers.color, 0.0, 1.0))
print("wrote demo_render.png")

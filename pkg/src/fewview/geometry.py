"""Pinhole cameras, rigid poses, covariance projection, and pose interpolation.

Conventions (fixed for all file I/O):
  camera looks down +z, +x right, +y down;
  pixel origin at the top-left, pixel centers at integer coordinates;
  poses are stored world-to-camera.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateIntrinsics, NonPositiveDepth

# Isotropic floor added to every projected 2D covariance (pixel^2), the
# usual dilation that keeps sub-pixel Gaussians invertible.
COV2D_FLOOR = 0.3


# ---------------------------------------------------------------------------
# Quaternion helpers (w, x, y, z ordering)
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Convert unit quaternion(s) (..., 4) to rotation matrix/matrices (..., 3, 3)."""
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def rotation_to_quat(R: np.ndarray) -> np.ndarray:
    """Convert a 3x3 rotation matrix to a unit quaternion (w, x, y, z), w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(R[i, i] - R[j, j] - R[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def quat_slerp(qa: np.ndarray, qb: np.ndarray, t: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between two unit quaternions."""
    qa = quat_normalize(qa)
    qb = quat_normalize(qb)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-10:
        return quat_normalize(qa + t * (qb - qa))
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    return quat_normalize((np.sin((1 - t) * theta) / s) * qa
                          + (np.sin(t * theta) / s) * qb)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DegenerateIntrinsics(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DegenerateIntrinsics(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}")


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform: x_cam = rotation @ x_world + translation."""

    rotation: np.ndarray  # (3, 3) orthonormal, det +1
    translation: np.ndarray  # (3,)
    quaternion: np.ndarray = field(default=None)  # (4,) wxyz, kept in sync

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.linalg.norm(R @ R.T - np.eye(3)) > 1e-6 or np.linalg.det(R) < 0:
            raise ValueError("rotation is not orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        q = self.quaternion
        if q is None:
            q = rotation_to_quat(R)
        else:
            q = quat_normalize(np.asarray(q, dtype=np.float64).reshape(4))
        object.__setattr__(self, "quaternion", q)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_quat(q: np.ndarray, translation: np.ndarray) -> "Pose":
        q = quat_normalize(np.asarray(q, dtype=np.float64))
        return Pose(quat_to_rotation(q), translation, q)

    @staticmethod
    def from_camera_to_world(c2w: np.ndarray) -> "Pose":
        """Build a world-to-camera pose from a 4x4 camera-to-world matrix."""
        c2w = np.asarray(c2w, dtype=np.float64)
        R = c2w[:3, :3].T
        t = -R @ c2w[:3, 3]
        return Pose(R, t)

    def camera_center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera_to_world(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.T
        m[:3, 3] = self.camera_center()
        return m


@dataclass(frozen=True)
class CameraView:
    """A pinhole camera with a pose and near/far clipping depths."""

    intrinsics: Intrinsics
    pose: Pose
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise ValueError(f"need 0 < near < far, got {self.near}, {self.far}")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def project_point(view: CameraView, point_world: np.ndarray) -> tuple[np.ndarray, float]:
    """Project a world point; returns (pixel (2,), camera-space depth)."""
    p = np.asarray(point_world, dtype=np.float64).reshape(3)
    pc = view.pose.rotation @ p + view.pose.translation
    z = pc[2]
    if z <= 1e-8:
        raise NonPositiveDepth(f"camera-space depth {z} <= 1e-8")
    k = view.intrinsics
    pixel = np.array([k.fx * pc[0] / z + k.cx, k.fy * pc[1] / z + k.cy])
    return pixel, float(z)


def unproject_pixel(view: CameraView, pixel: np.ndarray, depth: float,
                    check_bounds: bool = False) -> np.ndarray:
    """Lift a pixel at a given camera-space depth back to a world point."""
    if depth <= 1e-8:
        raise NonPositiveDepth(f"depth {depth} <= 1e-8")
    u, v = np.asarray(pixel, dtype=np.float64).reshape(2)
    k = view.intrinsics
    if check_bounds and not (0 <= u <= k.width - 1 and 0 <= v <= k.height - 1):
        raise ValueError(f"pixel ({u}, {v}) outside image bounds")
    pc = np.array([(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth])
    return view.pose.rotation.T @ (pc - view.pose.translation)


def perspective_jacobian(view: CameraView, point_cam: np.ndarray) -> np.ndarray:
    """2x3 Jacobian of the pixel projection at a camera-space point."""
    x, y, z = point_cam
    k = view.intrinsics
    return np.array([[k.fx / z, 0.0, -k.fx * x / z ** 2],
                     [0.0, k.fy / z, -k.fy * y / z ** 2]])


def splat_cov2d(view: CameraView, mean_world: np.ndarray, cov_world: np.ndarray,
                floor: float = COV2D_FLOOR) -> np.ndarray:
    """Project a 3D covariance to the image plane (first-order approximation).

    Returns J @ R_wc @ cov @ R_wc^T @ J^T + floor * I with J evaluated at the
    projected mean.
    """
    mean_world = np.asarray(mean_world, dtype=np.float64).reshape(3)
    cov_world = np.asarray(cov_world, dtype=np.float64).reshape(3, 3)
    R = view.pose.rotation
    pc = R @ mean_world + view.pose.translation
    if pc[2] <= view.near:
        raise NonPositiveDepth(f"camera-space depth {pc[2]} <= near {view.near}")
    J = perspective_jacobian(view, pc)
    M = J @ R
    return M @ cov_world @ M.T + floor * np.eye(2)


def sample_intermediate_pose(pose_i: Pose, pose_j: Pose, t: float) -> Pose:
    """Interpolate two poses: slerp on rotation, lerp on the camera centers."""
    if t <= 0.0:
        return pose_i
    if t >= 1.0:
        return pose_j
    q = quat_slerp(pose_i.quaternion, pose_j.quaternion, t)
    center = (1 - t) * pose_i.camera_center() + t * pose_j.camera_center()
    R = quat_to_rotation(q)
    return Pose(R, -R @ center, q)

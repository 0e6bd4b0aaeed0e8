import numpy as np
import pytest

from fewview.errors import DegenerateIntrinsics, NonPositiveDepth
from fewview.geometry import (Intrinsics, Pose, perspective_jacobian,
                              project_point, quat_normalize, quat_slerp,
                              quat_to_rotation, rotation_to_quat,
                              sample_intermediate_pose, splat_cov2d,
                              unproject_pixel)

from conftest import frontal_view


def test_quat_rotation_roundtrip(rng):
    for _ in range(50):
        q = quat_normalize(rng.normal(size=4))
        r = quat_to_rotation(q)
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.isclose(np.linalg.det(r), 1.0)
        q2 = rotation_to_quat(r)
        # q and -q encode the same rotation
        assert np.allclose(quat_to_rotation(q2), r, atol=1e-12)


def test_identity_quat():
    assert np.allclose(quat_to_rotation(np.array([1.0, 0, 0, 0])), np.eye(3))


def test_slerp_endpoints_and_midpoint(rng):
    qa = quat_normalize(rng.normal(size=4))
    qb = quat_normalize(rng.normal(size=4))
    assert np.allclose(quat_slerp(qa, qb, 0.0), qa)
    mid = quat_slerp(qa, qb, 0.5)
    assert np.isclose(np.linalg.norm(mid), 1.0)


def test_degenerate_intrinsics():
    with pytest.raises(DegenerateIntrinsics):
        Intrinsics(0.0, 50.0, 16, 16, 32, 32)
    with pytest.raises(DegenerateIntrinsics):
        Intrinsics(50.0, 50.0, 16, 16, 0, 32)


def test_project_unproject_roundtrip(rng):
    view = frontal_view()
    for _ in range(20):
        p = rng.normal(scale=0.5, size=3)
        pixel, depth = project_point(view, p)
        assert depth > 0
        back = unproject_pixel(view, pixel, depth)
        assert np.allclose(back, p, atol=1e-10)


def test_project_behind_camera_raises():
    view = frontal_view()
    with pytest.raises(NonPositiveDepth):
        project_point(view, np.array([0.0, 0.0, -10.0]))


def test_centered_point_projects_to_principal_point():
    view = frontal_view(size=32)
    pixel, depth = project_point(view, np.zeros(3))
    k = view.intrinsics
    assert np.allclose(pixel, [k.cx, k.cy])
    assert np.isclose(depth, 4.0)


def test_perspective_jacobian_matches_fd():
    view = frontal_view()
    p_cam = np.array([0.3, -0.2, 3.0])
    jac = perspective_jacobian(view, p_cam)
    h = 1e-6
    k = view.intrinsics

    def proj(pc):
        return np.array([k.fx * pc[0] / pc[2] + k.cx, k.fy * pc[1] / pc[2] + k.cy])

    for axis in range(3):
        d = np.zeros(3)
        d[axis] = h
        fd = (proj(p_cam + d) - proj(p_cam - d)) / (2 * h)
        assert np.allclose(jac[:, axis], fd, atol=1e-6)


def test_splat_cov2d_floor_and_symmetry(rng):
    view = frontal_view()
    cov = np.diag([1e-8, 1e-8, 1e-8])  # degenerate 3D covariance
    c2d = splat_cov2d(view, np.array([0.0, 0.0, 0.0]), cov)
    assert np.allclose(c2d, c2d.T)
    assert np.all(np.linalg.eigvalsh(c2d) >= 0.3 - 1e-12)


def test_splat_cov2d_behind_raises():
    view = frontal_view()
    with pytest.raises(NonPositiveDepth):
        splat_cov2d(view, np.array([0.0, 0.0, -5.0]), np.eye(3) * 0.01)


def test_intermediate_pose_endpoints(rng):
    qa = quat_normalize(rng.normal(size=4))
    qb = quat_normalize(rng.normal(size=4))
    pa = Pose.from_quat(qa, rng.normal(size=3))
    pb = Pose.from_quat(qb, rng.normal(size=3))
    assert sample_intermediate_pose(pa, pb, 0.0) is pa
    assert sample_intermediate_pose(pa, pb, 1.0) is pb
    mid = sample_intermediate_pose(pa, pb, 0.4)
    # camera centers interpolate linearly
    expect = 0.6 * pa.camera_center() + 0.4 * pb.camera_center()
    assert np.allclose(mid.camera_center(), expect, atol=1e-12)
    assert np.allclose(mid.rotation @ mid.rotation.T, np.eye(3), atol=1e-12)


def test_pose_c2w_roundtrip(rng):
    pose = Pose.from_quat(quat_normalize(rng.normal(size=4)), rng.normal(size=3))
    back = Pose.from_camera_to_world(pose.to_camera_to_world())
    assert np.allclose(back.rotation, pose.rotation, atol=1e-12)
    assert np.allclose(back.translation, pose.translation, atol=1e-12)

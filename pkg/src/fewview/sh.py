"""Real spherical harmonics basis up to degree 3, with direction gradients."""

from __future__ import annotations

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
      0.3731763325901154, -0.4570457994644658, 1.4453057213202769,
      -0.5900435899266435)


def num_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate the basis at unit directions (N, 3) -> (N, (degree+1)^2)."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = dirs.shape[0]
    b = np.empty((n, num_coeffs(degree)))
    b[:, 0] = C0
    if degree < 1:
        return b
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    b[:, 1] = -C1 * y
    b[:, 2] = C1 * z
    b[:, 3] = -C1 * x
    if degree < 2:
        return b
    xx, yy, zz = x * x, y * y, z * z
    b[:, 4] = C2[0] * x * y
    b[:, 5] = C2[1] * y * z
    b[:, 6] = C2[2] * (2 * zz - xx - yy)
    b[:, 7] = C2[3] * x * z
    b[:, 8] = C2[4] * (xx - yy)
    if degree < 3:
        return b
    b[:, 9] = C3[0] * y * (3 * xx - yy)
    b[:, 10] = C3[1] * x * y * z
    b[:, 11] = C3[2] * y * (4 * zz - xx - yy)
    b[:, 12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
    b[:, 13] = C3[4] * x * (4 * zz - xx - yy)
    b[:, 14] = C3[5] * z * (xx - yy)
    b[:, 15] = C3[6] * x * (xx - 3 * yy)
    return b


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d basis / d direction at unit directions (N, 3) -> (N, B, 3)."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = dirs.shape[0]
    g = np.zeros((n, num_coeffs(degree), 3))
    if degree < 1:
        return g
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    g[:, 1, 1] = -C1
    g[:, 2, 2] = C1
    g[:, 3, 0] = -C1
    if degree < 2:
        return g
    g[:, 4, 0] = C2[0] * y
    g[:, 4, 1] = C2[0] * x
    g[:, 5, 1] = C2[1] * z
    g[:, 5, 2] = C2[1] * y
    g[:, 6, 0] = C2[2] * (-2 * x)
    g[:, 6, 1] = C2[2] * (-2 * y)
    g[:, 6, 2] = C2[2] * (4 * z)
    g[:, 7, 0] = C2[3] * z
    g[:, 7, 2] = C2[3] * x
    g[:, 8, 0] = C2[4] * (2 * x)
    g[:, 8, 1] = C2[4] * (-2 * y)
    if degree < 3:
        return g
    xx, yy, zz = x * x, y * y, z * z
    g[:, 9, 0] = C3[0] * (6 * x * y)
    g[:, 9, 1] = C3[0] * (3 * xx - 3 * yy)
    g[:, 10, 0] = C3[1] * y * z
    g[:, 10, 1] = C3[1] * x * z
    g[:, 10, 2] = C3[1] * x * y
    g[:, 11, 0] = C3[2] * (-2 * x * y)
    g[:, 11, 1] = C3[2] * (4 * zz - xx - 3 * yy)
    g[:, 11, 2] = C3[2] * (8 * y * z)
    g[:, 12, 0] = C3[3] * (-6 * x * z)
    g[:, 12, 1] = C3[3] * (-6 * y * z)
    g[:, 12, 2] = C3[3] * (6 * zz - 3 * xx - 3 * yy)
    g[:, 13, 0] = C3[4] * (4 * zz - 3 * xx - yy)
    g[:, 13, 1] = C3[4] * (-2 * x * y)
    g[:, 13, 2] = C3[4] * (8 * x * z)
    g[:, 14, 0] = C3[5] * (2 * x * z)
    g[:, 14, 1] = C3[5] * (-2 * y * z)
    g[:, 14, 2] = C3[5] * (xx - yy)
    g[:, 15, 0] = C3[6] * (3 * xx - 3 * yy)
    g[:, 15, 1] = C3[6] * (-6 * x * y)
    return g

"""Training losses: photometric (L1 + SSIM), opacity, and locality.

SSIM uses an 11x11 Gaussian window (sigma 1.5, dynamic range 1) evaluated on
valid windows only, which keeps the analytic gradient an exact adjoint.
"""

from __future__ import annotations

import numpy as np

from . import sh as shlib
from .errors import EmptyScene, ShapeMismatch, StaleNeighbors
from .imageops import _correlate1d_valid, _correlate1d_valid_adjoint, gaussian_kernel1d
from .scene import GaussianScene, dc_colors

SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
LAMBDA_SSIM = 0.2

_KERNEL = gaussian_kernel1d(SSIM_SIGMA)  # 11 taps


def _filt(x: np.ndarray) -> np.ndarray:
    return _correlate1d_valid(_correlate1d_valid(x, _KERNEL, 0), _KERNEL, 1)


def _filt_adjoint(u: np.ndarray, height: int, width: int) -> np.ndarray:
    g = _correlate1d_valid_adjoint(u, _KERNEL, 1, width)
    return _correlate1d_valid_adjoint(g, _KERNEL, 0, height)


def _ssim_maps(x: np.ndarray, y: np.ndarray):
    mu_x = _filt(x)
    mu_y = _filt(y)
    s_xx = _filt(x * x) - mu_x ** 2
    s_yy = _filt(y * y) - mu_y ** 2
    s_xy = _filt(x * y) - mu_x * mu_y
    a1 = 2 * mu_x * mu_y + SSIM_C1
    a2 = 2 * s_xy + SSIM_C2
    b1 = mu_x ** 2 + mu_y ** 2 + SSIM_C1
    b2 = s_xx + s_yy + SSIM_C2
    return mu_x, mu_y, s_xx, s_xy, a1, a2, b1, b2


def ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Mean SSIM over valid 11x11 windows (and channels, if present)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatch(f"{x.shape} vs {y.shape}")
    *_, a1, a2, b1, b2 = _ssim_maps(x, y)
    return float(np.mean(a1 * a2 / (b1 * b2)))


def ssim_with_grad(x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """SSIM value and its gradient with respect to the first image."""
    h, w = x.shape[:2]
    mu_x, mu_y, _, _, a1, a2, b1, b2 = _ssim_maps(x, y)
    denom = b1 * b2
    s = a1 * a2 / denom
    u = np.full_like(s, 1.0 / s.size)
    d_a1 = u * a2 / denom
    d_a2 = u * a1 / denom
    d_b1 = -u * s / b1
    d_b2 = -u * s / b2
    d_sxy = 2 * d_a2
    d_sxx = d_b2
    d_mux = d_a1 * 2 * mu_y + d_b1 * 2 * mu_x - d_sxy * mu_y - d_sxx * 2 * mu_x
    grad = (_filt_adjoint(d_mux, h, w)
            + _filt_adjoint(d_sxx, h, w) * 2 * x
            + _filt_adjoint(d_sxy, h, w) * y)
    return float(np.mean(s)), grad


def photometric_loss(rendered: np.ndarray, target: np.ndarray,
                     lambda_ssim: float = LAMBDA_SSIM) -> tuple[float, np.ndarray]:
    """(1 - lambda) L1 + lambda (1 - SSIM); returns (loss, d loss / d rendered)."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ShapeMismatch(f"{rendered.shape} vs {target.shape}")
    diff = rendered - target
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - lambda_ssim) * np.sign(diff) / diff.size
    if lambda_ssim > 0.0:
        s, ds = ssim_with_grad(rendered, target)
        loss = (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - s)
        grad = grad - lambda_ssim * ds
    else:
        loss = l1
    return loss, grad


def opacity_loss(scene: GaussianScene) -> tuple[float, np.ndarray]:
    """Mean squared opacity; returns (loss, d loss / d opacity_logit)."""
    n = len(scene)
    if n == 0:
        raise EmptyScene("opacity_loss on empty scene")
    o = scene.opacities
    loss = float(np.mean(o ** 2))
    grad = (2.0 * o / n) * o * (1.0 - o)
    return loss, grad


def locality_loss(scene: GaussianScene, neighbors: np.ndarray, *,
                  delta: float = 2.0, detach_means: bool = False,
                  ) -> tuple[float, np.ndarray, np.ndarray]:
    """Distance-weighted color disagreement with the K nearest neighbors.

    Each pair contributes exp(-delta * |mu_k - mu_i|) * |c_k - c_i| with c the
    view-independent (DC) color; the sum is normalized by N * K. Returns
    (loss, d/d means (N, 3), d/d sh_dc (N, 3)).
    """
    n = len(scene)
    if neighbors.shape[0] != n:
        raise StaleNeighbors(f"neighbors for {neighbors.shape[0]} Gaussians, scene has {n}")
    k = neighbors.shape[1]
    colors, raw = dc_colors(scene)

    mu_i = scene.means[:, None, :]                  # (N, 1, 3)
    mu_k = scene.means[neighbors]                   # (N, K, 3)
    c_i = colors[:, None, :]
    c_k = colors[neighbors]
    dmu = mu_k - mu_i
    dist = np.linalg.norm(dmu, axis=-1)             # (N, K)
    w = np.exp(-delta * dist)
    dc = c_k - c_i
    cnorm = np.linalg.norm(dc, axis=-1)
    norm = n * k
    loss = float(np.sum(w * cnorm) / norm)

    # color gradients (subgradient 0 at the |c_k - c_i| = 0 kink)
    safe = np.maximum(cnorm, 1e-30)
    unit_c = np.where(cnorm[..., None] > 0, dc / safe[..., None], 0.0)
    pair_c = (w[..., None] * unit_c) / norm         # d loss / d c_k per pair
    d_colors = -pair_c.sum(axis=1)
    np.add.at(d_colors, neighbors.ravel(), pair_c.reshape(-1, 3))

    d_means = np.zeros((n, 3))
    if not detach_means:
        safe_d = np.maximum(dist, 1e-30)
        unit_mu = np.where(dist[..., None] > 0, dmu / safe_d[..., None], 0.0)
        pair_mu = (-delta * w * cnorm)[..., None] * unit_mu / norm  # d / d mu_k
        d_means = -pair_mu.sum(axis=1)
        np.add.at(d_means, neighbors.ravel(), pair_mu.reshape(-1, 3))

    d_sh_dc = d_colors * (raw > 0) * shlib.C0
    return loss, d_means, d_sh_dc

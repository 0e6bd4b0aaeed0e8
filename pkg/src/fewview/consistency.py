"""Match-warped supervision for sampled novel views.

Matched training-view pixels are lifted with their rendered depths, warped
into a sampled novel view, and filtered by depth agreement and a color
gradient weighting. The surviving matches supervise the novel render's
depth, color, and feature maps at the consensus pixel. All warped
quantities are constants: gradients flow only into the novel view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import imageops as ops
from .correspondence import MatchSet
from .errors import NoSurvivingMatches
from .features import FeatureMap
from .geometry import CameraView
from .renderer import GradBuffers

DEFAULT_THETA_G = 10.0
DEFAULT_THETA_GRAD = 0.1
DEFAULT_THETA_PX = 2.0

_SOBEL_STEP_RESPONSE = 4.0  # |gx| on an ideal 0->1 step edge


@dataclass(frozen=True)
class ConsistencyWeights:
    """Term weights and filtering thresholds for the novel-view losses."""

    alpha: float = 0.5      # geometry (depth) term
    beta: float = 0.05      # color term
    gamma: float = 0.001    # feature term
    theta_g: float = DEFAULT_THETA_G       # depth agreement, % of scene extent
    theta_grad: float = DEFAULT_THETA_GRAD  # gradient-weight cutoff
    theta_px: float = DEFAULT_THETA_PX     # pixel consensus radius

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma,
                self.theta_g, self.theta_grad, self.theta_px)
        if any(v < 0 for v in vals):
            raise ValueError("consistency weights and thresholds must be non-negative")


@dataclass
class WarpedMatch:
    """One match warped into the novel view, with constant attachments."""

    view_i: int
    view_j: int
    pixel_i: np.ndarray        # (2,) source pixel in view i
    pixel_j: np.ndarray
    depth_i: float             # rendered depth at pixel_i (constant)
    depth_j: float
    warped_pixel_i: np.ndarray  # (2,) projection into the novel view
    warped_pixel_j: np.ndarray
    warped_depth_i: float      # camera-k z of the lifted point
    warped_depth_j: float
    pixel: np.ndarray          # (2,) consensus pixel p (midpoint)
    mask: bool
    weight_i: float            # gradient weight from view i's image
    weight_j: float
    color_i: np.ndarray        # (3,) source color at pixel_i (constant)
    color_j: np.ndarray
    feature_i: np.ndarray      # (C,) source feature at pixel_i (constant)
    feature_j: np.ndarray


@dataclass
class WarpStats:
    n_input: int = 0
    n_behind: int = 0
    n_out_of_bounds: int = 0
    n_pixel_disagree: int = 0
    n_depth_disagree: int = 0
    n_masked_in: int = 0


# ---------------------------------------------------------------------------
# Filtering primitives
# ---------------------------------------------------------------------------

def agreement_mask(x_i, x_j, theta: float):
    """1 where |x_i - x_j| < theta (strict), elementwise."""
    if theta < 0:
        raise ValueError("theta must be non-negative")
    return (np.abs(np.asarray(x_i) - np.asarray(x_j)) < theta).astype(np.float64)


def gradient_weight(grad_mag: float, theta_grad: float = DEFAULT_THETA_GRAD) -> float:
    """Down-weight supervision from high-gradient regions.

    Returns exp(-grad_mag) when grad_mag exceeds theta_grad (strictly),
    otherwise 1; always in (0, 1] for non-negative inputs.
    """
    return float(np.exp(-grad_mag)) if grad_mag > theta_grad else 1.0


def sobel_gradient_magnitude(image: np.ndarray) -> np.ndarray:
    """Normalized 3x3 Sobel magnitude of the grayscale image, in [0, 1].

    Normalized so an ideal 0->1 step edge responds with exactly 1.0;
    diagonal edges can exceed that per-axis bound, so the magnitude is
    clipped. Borders use replicate padding.
    """
    gray = ops.luminance(image) if image.ndim == 3 else np.asarray(image, dtype=np.float64)
    gx, gy = ops.sobel_xy(gray)
    mag = np.hypot(gx, gy) / _SOBEL_STEP_RESPONSE
    return np.clip(mag, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Warping
# ---------------------------------------------------------------------------

def _lift_world(view: CameraView, pixels: np.ndarray, depths: np.ndarray) -> np.ndarray:
    """Vectorized pixel+depth -> world points for one view. (M, 3)"""
    k = view.intrinsics
    x = (pixels[:, 0] - k.cx) / k.fx
    y = (pixels[:, 1] - k.cy) / k.fy
    cam = np.stack([x * depths, y * depths, depths], axis=1)
    pose = view.pose
    return (cam - pose.translation) @ pose.rotation


def _project(view: CameraView, world: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized world -> (pixels (M, 2), camera depths (M,))."""
    pose = view.pose
    cam = world @ pose.rotation.T + pose.translation
    z = cam[:, 2]
    k = view.intrinsics
    safe_z = np.where(np.abs(z) > 1e-12, z, 1e-12)
    u = k.fx * cam[:, 0] / safe_z + k.cx
    v = k.fy * cam[:, 1] / safe_z + k.cy
    return np.stack([u, v], axis=1), z


def warp_matches(matches: MatchSet, depth_i: np.ndarray, depth_j: np.ndarray,
                 view_i: CameraView, view_j: CameraView, view_k: CameraView, *,
                 image_i: np.ndarray, image_j: np.ndarray,
                 features_i: np.ndarray | None = None,
                 features_j: np.ndarray | None = None,
                 grad_mag_i: np.ndarray | None = None,
                 grad_mag_j: np.ndarray | None = None,
                 weights: ConsistencyWeights | None = None,
                 scene_extent: float = 1.0) -> tuple[list[WarpedMatch], WarpStats]:
    """Warp a match set into the novel view and attach constant supervision.

    `depth_i`/`depth_j` are per-match rendered depths already sampled at the
    match coordinates. Matches that land behind camera k or out of its image
    bounds are discarded; the rest carry a mask bit combining the pixel
    consensus test and the depth agreement test (in normalized depth units:
    depth / scene_extent * 100). Colors and features are sampled bilinearly
    from the source views; none of the attachments carry gradients.
    """
    w = weights or ConsistencyWeights()
    px_i = matches.pixels_i
    px_j = matches.pixels_j
    zi = np.asarray(depth_i, dtype=np.float64).reshape(-1)
    zj = np.asarray(depth_j, dtype=np.float64).reshape(-1)
    stats = WarpStats(n_input=len(matches))

    world_i = _lift_world(view_i, px_i, zi)
    world_j = _lift_world(view_j, px_j, zj)
    warped_i, wz_i = _project(view_k, world_i)
    warped_j, wz_j = _project(view_k, world_j)

    in_front = (wz_i > view_k.near) & (wz_j > view_k.near)
    stats.n_behind = int(np.count_nonzero(~in_front))
    k = view_k.intrinsics
    in_bounds = ((warped_i[:, 0] >= 0) & (warped_i[:, 0] <= k.width - 1)
                 & (warped_i[:, 1] >= 0) & (warped_i[:, 1] <= k.height - 1)
                 & (warped_j[:, 0] >= 0) & (warped_j[:, 0] <= k.width - 1)
                 & (warped_j[:, 1] >= 0) & (warped_j[:, 1] <= k.height - 1))
    stats.n_out_of_bounds = int(np.count_nonzero(in_front & ~in_bounds))
    keep = in_front & in_bounds

    px_dist = np.linalg.norm(warped_i - warped_j, axis=1)
    px_ok = px_dist <= w.theta_px
    depth_scale = 100.0 / max(scene_extent, 1e-12)
    depth_ok = agreement_mask(wz_i * depth_scale, wz_j * depth_scale, w.theta_g) > 0
    stats.n_pixel_disagree = int(np.count_nonzero(keep & ~px_ok))
    stats.n_depth_disagree = int(np.count_nonzero(keep & px_ok & ~depth_ok))
    mask = keep & px_ok & depth_ok
    stats.n_masked_in = int(np.count_nonzero(mask))

    colors_i = ops.bilinear_sample(image_i, px_i)
    colors_j = ops.bilinear_sample(image_j, px_j)
    feats_i = ops.bilinear_sample(features_i, px_i) if features_i is not None \
        else np.zeros((len(matches), 0))
    feats_j = ops.bilinear_sample(features_j, px_j) if features_j is not None \
        else np.zeros((len(matches), 0))
    gmag_i = ops.bilinear_sample(grad_mag_i, px_i) if grad_mag_i is not None \
        else np.zeros(len(matches))
    gmag_j = ops.bilinear_sample(grad_mag_j, px_j) if grad_mag_j is not None \
        else np.zeros(len(matches))

    out = []
    for m in np.flatnonzero(keep):
        out.append(WarpedMatch(
            view_i=matches.view_i, view_j=matches.view_j,
            pixel_i=px_i[m].copy(), pixel_j=px_j[m].copy(),
            depth_i=float(zi[m]), depth_j=float(zj[m]),
            warped_pixel_i=warped_i[m].copy(), warped_pixel_j=warped_j[m].copy(),
            warped_depth_i=float(wz_i[m]), warped_depth_j=float(wz_j[m]),
            pixel=0.5 * (warped_i[m] + warped_j[m]),
            mask=bool(mask[m]),
            weight_i=gradient_weight(float(gmag_i[m]), w.theta_grad),
            weight_j=gradient_weight(float(gmag_j[m]), w.theta_grad),
            color_i=np.asarray(colors_i[m], dtype=np.float64).copy(),
            color_j=np.asarray(colors_j[m], dtype=np.float64).copy(),
            feature_i=np.asarray(feats_i[m], dtype=np.float64).copy(),
            feature_j=np.asarray(feats_j[m], dtype=np.float64).copy(),
        ))
    return out, stats


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def consistency_loss(warped: list[WarpedMatch], novel_render, novel_features,
                     weights: ConsistencyWeights | None = None
                     ) -> tuple[float, GradBuffers, np.ndarray]:
    """Novel-view supervision at the consensus pixels of surviving matches.

    Per match (mask bit set), each of the depth / color / feature terms
    compares the novel render at p against the closer of the two warped
    source estimates; the depth term's winning source also selects which
    source image provides the gradient weight. Terms are averaged over
    surviving matches and combined with (alpha, beta, gamma).

    Returns the scalar loss, gradients w.r.t. the novel render's color and
    depth buffers, and gradients w.r.t. the novel feature map. Raises
    NoSurvivingMatches when no match carries supervision.
    """
    w = weights or ConsistencyWeights()
    live = [m for m in warped if m.mask]
    if not live:
        raise NoSurvivingMatches("no masked-in matches at this novel view")

    feat_arr = novel_features.data if isinstance(novel_features, FeatureMap) \
        else novel_features
    h, wd = novel_render.depth.shape
    n = len(live)
    pix = np.stack([m.pixel for m in live])
    z_k = ops.bilinear_sample(novel_render.depth, pix)
    c_k = ops.bilinear_sample(novel_render.color, pix)
    f_k = ops.bilinear_sample(feat_arr, pix) if feat_arr is not None and feat_arr.size \
        else np.zeros((n, 0))

    zt_i = np.array([m.warped_depth_i for m in live])
    zt_j = np.array([m.warped_depth_j for m in live])
    d_i = np.abs(z_k - zt_i)
    d_j = np.abs(z_k - zt_j)
    pick_i = d_i <= d_j  # geometry min; ties go to i and fix W's source image

    wt = np.where(pick_i,
                  [m.weight_i for m in live],
                  [m.weight_j for m in live])
    zt = np.where(pick_i, zt_i, zt_j)
    ft_i = np.stack([m.feature_i for m in live])
    ft_j = np.stack([m.feature_j for m in live])

    # geometry: L1 on the winning depth difference
    geom_terms = np.minimum(d_i, d_j)
    d_zk = wt * np.sign(z_k - zt) / n

    # color: each channel's L1 against the winning source color, summed
    dc_i = np.abs(c_k - np.stack([m.color_i for m in live])).sum(axis=1)
    dc_j = np.abs(c_k - np.stack([m.color_j for m in live])).sum(axis=1)
    color_pick_i = dc_i <= dc_j
    color_terms = np.minimum(dc_i, dc_j)
    ct_color = np.where(color_pick_i[:, None],
                        np.stack([m.color_i for m in live]),
                        np.stack([m.color_j for m in live]))
    d_ck = wt[:, None] * np.sign(c_k - ct_color) / n

    # features: L2 against the closer source feature vector
    if f_k.shape[1]:
        df_i = np.linalg.norm(f_k - ft_i, axis=1)
        df_j = np.linalg.norm(f_k - ft_j, axis=1)
        feat_pick_i = df_i <= df_j
        feat_terms = np.minimum(df_i, df_j)
        ft = np.where(feat_pick_i[:, None], ft_i, ft_j)
        safe = np.where(feat_terms > 1e-12, feat_terms, 1.0)
        d_fk = wt[:, None] * (f_k - ft) / safe[:, None] / n
    else:
        feat_terms = np.zeros(n)
        d_fk = np.zeros((n, 0))

    l_geom = float(np.sum(wt * geom_terms) / n)
    l_color = float(np.sum(wt * color_terms) / n)
    l_sem = float(np.sum(wt * feat_terms) / n)
    loss = w.alpha * l_geom + w.beta * l_color + w.gamma * l_sem

    grads = GradBuffers.zeros(h, wd)
    grads.d_depth += ops.bilinear_scatter((h, wd), pix, w.alpha * d_zk)
    grads.d_color += ops.bilinear_scatter((h, wd, 3), pix, w.beta * d_ck)
    if f_k.shape[1]:
        feat_grad = ops.bilinear_scatter(feat_arr.shape, pix, w.gamma * d_fk)
    else:
        feat_grad = np.zeros((h, wd, 0))
    return loss, grads, feat_grad

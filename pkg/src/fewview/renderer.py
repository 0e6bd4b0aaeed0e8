"""Differentiable rasterizer: tiled forward splatting and analytic backward.

Forward: Gaussians are frustum-culled, projected, globally sorted by
camera-space depth, binned into 16x16 pixel tiles by their screen-space
footprint, and alpha-composited front to back per pixel. Depth is composited
with the same weights using the camera-space mean z.

Backward: per-Gaussian screen-space quantities are cached from the forward
pass; per-pixel blending state is reconstructed back to front from the final
transmittance, so memory stays O(pixels + instances).

`render_forward_reference` is a deliberately simple per-pixel compositor
(no tiling, no early termination) used as the correctness oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from . import sh as shlib
from .errors import StateMismatch
from .geometry import COV2D_FLOOR, CameraView
from .scene import GaussianScene, compose_covariances, sigmoid

TILE = 16
# default elliptical footprint cutoff: sigma <= 4.5 is the 3-sigma contour
MAX_SIGMA = 4.5


# ---------------------------------------------------------------------------
# Buffers
# ---------------------------------------------------------------------------

@dataclass
class RenderBuffers:
    color: np.ndarray  # (H, W, 3), unclamped
    depth: np.ndarray  # (H, W)
    alpha: np.ndarray  # (H, W)
    contrib: np.ndarray | None = None  # (H, W) contributor counts


@dataclass
class GradBuffers:
    d_color: np.ndarray
    d_depth: np.ndarray
    d_alpha: np.ndarray

    @staticmethod
    def zeros(height: int, width: int) -> "GradBuffers":
        return GradBuffers(np.zeros((height, width, 3)), np.zeros((height, width)),
                           np.zeros((height, width)))


@dataclass
class ParamGrads:
    """Per-Gaussian parameter gradients plus density-control statistics."""

    means: np.ndarray
    quats: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    pos2d: np.ndarray  # (N, 2) accumulated d/d mu_I in pixels
    seen: np.ndarray   # (N,) bool, contributed to at least one pixel

    @staticmethod
    def zeros_like(scene: GaussianScene) -> "ParamGrads":
        n = len(scene)
        return ParamGrads(np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)),
                          np.zeros(n), np.zeros_like(scene.sh), np.zeros((n, 2)),
                          np.zeros(n, dtype=bool))

    def add_scaled(self, other: "ParamGrads", scale: float = 1.0):
        self.means += scale * other.means
        self.quats += scale * other.quats
        self.log_scales += scale * other.log_scales
        self.opacity_logits += scale * other.opacity_logits
        self.sh += scale * other.sh
        self.pos2d += other.pos2d
        self.seen |= other.seen

    def pos2d_norms(self) -> np.ndarray:
        return np.linalg.norm(self.pos2d, axis=1)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in
                   (self.means, self.quats, self.log_scales, self.opacity_logits, self.sh))


@dataclass
class RenderState:
    """Everything the backward pass needs, captured at forward time."""

    view: CameraView
    scene_version: int
    n_gaussians: int
    sh_degree: int
    # compacted, depth-sorted Gaussian data (V rows)
    idx: np.ndarray           # (V,) row in the scene
    means2d: np.ndarray       # (V, 2)
    inv_cov: np.ndarray       # (V, 3) upper-triangle of Sigma_I^{-1}
    cov2d: np.ndarray         # (V, 3) upper-triangle of Sigma_I
    opacities: np.ndarray     # (V,)
    colors: np.ndarray        # (V, 3) clamped SH colors
    clamp_mask: np.ndarray    # (V, 3) pre-clamp value > 0
    zs: np.ndarray            # (V,)
    radii: np.ndarray         # (V,)
    t_cam: np.ndarray         # (V, 3) camera-space means
    proj_mat: np.ndarray      # (V, 2, 3) J @ R_wc
    cov3d: np.ndarray         # (V, 3, 3)
    dirs: np.ndarray          # (V, 3) unit view directions
    dir_norms: np.ndarray     # (V,)
    basis: np.ndarray         # (V, B)
    quats: np.ndarray         # (V, 4) as used at forward time
    log_scales: np.ndarray    # (V, 3)
    # tile structure
    entries: np.ndarray       # (E,) index into compacted rows
    tile_offsets: np.ndarray  # (n_tiles + 1,)
    tiles_x: int
    # per-pixel blending state
    final_t: np.ndarray       # (H, W)
    n_contrib: np.ndarray     # (H, W) int32, local rank of last contributor
    raw_depth: np.ndarray
    raw_alpha: np.ndarray
    # settings
    term_threshold: float
    alpha_skip: float
    max_sigma: float
    depth_alpha_normalize: bool


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _expand_bins(tx0, tx1, ty0, ty1, tiles_x, entries_tile, entries_g):
    k = 0
    for i in range(tx0.shape[0]):
        for ty in range(ty0[i], ty1[i] + 1):
            base = ty * tiles_x
            for tx in range(tx0[i], tx1[i] + 1):
                entries_tile[k] = base + tx
                entries_g[k] = i
                k += 1
    return k


@njit(cache=True)
def _forward_kernel(entries, offsets, tiles_x, H, W,
                    u, v, ia, ib, ic, opac, colors, zs, radii,
                    term_t, alpha_min, max_sigma,
                    out_color, out_depth, out_alpha, out_t, n_contrib):
    n_tiles = offsets.shape[0] - 1
    for tile in range(n_tiles):
        s = offsets[tile]
        e = offsets[tile + 1]
        if s == e:
            continue
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        y1 = min((ty + 1) * TILE, H)
        x1 = min((tx + 1) * TILE, W)
        for py in range(ty * TILE, y1):
            for px in range(tx * TILE, x1):
                t_cur = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                d = 0.0
                a = 0.0
                last = 0
                for k in range(s, e):
                    if t_cur < term_t:
                        break
                    g = entries[k]
                    dx = u[g] - px
                    dy = v[g] - py
                    r = radii[g]
                    if dx > r or dx < -r or dy > r or dy < -r:
                        continue
                    sig = 0.5 * (ia[g] * dx * dx + ic[g] * dy * dy) + ib[g] * dx * dy
                    if sig < 0.0 or sig > max_sigma:
                        continue
                    alpha = opac[g] * np.exp(-sig)
                    if alpha < alpha_min:
                        continue
                    w = alpha * t_cur
                    c0 += colors[g, 0] * w
                    c1 += colors[g, 1] * w
                    c2 += colors[g, 2] * w
                    d += zs[g] * w
                    a += w
                    t_cur *= 1.0 - alpha
                    last = k - s + 1
                out_color[py, px, 0] = c0
                out_color[py, px, 1] = c1
                out_color[py, px, 2] = c2
                out_depth[py, px] = d
                out_alpha[py, px] = a
                out_t[py, px] = t_cur
                n_contrib[py, px] = last


@njit(cache=True)
def _backward_kernel(entries, offsets, tiles_x, H, W,
                     u, v, ia, ib, ic, opac, colors, zs, radii,
                     alpha_min, max_sigma,
                     final_t, n_contrib, d_color, d_depth, d_alpha,
                     g_color, g_opac, g_ia, g_ib, g_ic, g_u, g_v, g_z, seen):
    n_tiles = offsets.shape[0] - 1
    for tile in range(n_tiles):
        s = offsets[tile]
        e = offsets[tile + 1]
        if s == e:
            continue
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        y1 = min((ty + 1) * TILE, H)
        x1 = min((tx + 1) * TILE, W)
        for py in range(ty * TILE, y1):
            for px in range(tx * TILE, x1):
                last = n_contrib[py, px]
                if last == 0:
                    continue
                dlc0 = d_color[py, px, 0]
                dlc1 = d_color[py, px, 1]
                dlc2 = d_color[py, px, 2]
                dld = d_depth[py, px]
                dla = d_alpha[py, px]
                t_cur = final_t[py, px]
                acc_c0 = 0.0
                acc_c1 = 0.0
                acc_c2 = 0.0
                acc_d = 0.0
                acc_w = 0.0
                for k in range(s + last - 1, s - 1, -1):
                    g = entries[k]
                    dx = u[g] - px
                    dy = v[g] - py
                    r = radii[g]
                    if dx > r or dx < -r or dy > r or dy < -r:
                        continue
                    sig = 0.5 * (ia[g] * dx * dx + ic[g] * dy * dy) + ib[g] * dx * dy
                    if sig < 0.0 or sig > max_sigma:
                        continue
                    expsig = np.exp(-sig)
                    alpha = opac[g] * expsig
                    if alpha < alpha_min:
                        continue
                    om = 1.0 - alpha
                    t_i = t_cur / om
                    w = alpha * t_i
                    # gradient of the pixel outputs w.r.t. this alpha
                    g_dot = dlc0 * colors[g, 0] + dlc1 * colors[g, 1] \
                        + dlc2 * colors[g, 2] + dld * zs[g] + dla
                    d_alpha_i = g_dot * t_i - (dlc0 * acc_c0 + dlc1 * acc_c1
                                               + dlc2 * acc_c2 + dld * acc_d
                                               + dla * acc_w) / om
                    g_color[g, 0] += dlc0 * w
                    g_color[g, 1] += dlc1 * w
                    g_color[g, 2] += dlc2 * w
                    g_z[g] += dld * w
                    g_opac[g] += expsig * d_alpha_i
                    d_sig = -alpha * d_alpha_i
                    g_ia[g] += d_sig * 0.5 * dx * dx
                    g_ib[g] += d_sig * dx * dy
                    g_ic[g] += d_sig * 0.5 * dy * dy
                    g_u[g] += d_sig * (ia[g] * dx + ib[g] * dy)
                    g_v[g] += d_sig * (ib[g] * dx + ic[g] * dy)
                    seen[g] = True
                    acc_c0 += colors[g, 0] * w
                    acc_c1 += colors[g, 1] * w
                    acc_c2 += colors[g, 2] * w
                    acc_d += zs[g] * w
                    acc_w += w
                    t_cur = t_i


# ---------------------------------------------------------------------------
# Projection (forward cache)
# ---------------------------------------------------------------------------

def _project_scene(scene: GaussianScene, view: CameraView, max_sigma: float,
                   floor: float):
    """Cull, project, and color all Gaussians; returns compacted sorted arrays."""
    k = view.intrinsics
    R = view.pose.rotation
    t_cam_all = scene.means @ R.T + view.pose.translation
    z_all = t_cam_all[:, 2]
    valid = z_all > view.near
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        return None
    t_cam = t_cam_all[idx]
    z = t_cam[:, 2]
    u = k.fx * t_cam[:, 0] / z + k.cx
    v = k.fy * t_cam[:, 1] / z + k.cy

    # M = J @ R_wc, J the 2x3 perspective Jacobian at the mean
    j00 = k.fx / z
    j02 = -k.fx * t_cam[:, 0] / z ** 2
    j11 = k.fy / z
    j12 = -k.fy * t_cam[:, 1] / z ** 2
    M = np.empty((idx.size, 2, 3))
    M[:, 0, :] = j00[:, None] * R[0][None, :] + j02[:, None] * R[2][None, :]
    M[:, 1, :] = j11[:, None] * R[1][None, :] + j12[:, None] * R[2][None, :]

    cov3d = compose_covariances(scene)[idx]
    cov2d_m = np.einsum("nij,njk,nlk->nil", M, cov3d, M)
    a = cov2d_m[:, 0, 0] + floor
    b = cov2d_m[:, 0, 1]
    c = cov2d_m[:, 1, 1] + floor
    det = a * c - b * b
    ok = det > 1e-12
    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = np.ceil(np.sqrt(np.maximum(2.0 * min(max_sigma, 1e6) * lam_max, 0.0))) + 1.0
    ok &= (u + radius >= 0) & (u - radius <= k.width - 1) \
        & (v + radius >= 0) & (v - radius <= k.height - 1)
    if not np.any(ok):
        return None

    sel = np.flatnonzero(ok)
    idx = idx[sel]
    order = np.argsort(z[sel], kind="stable")  # global depth sort, ties by index
    sel = sel[order]
    idx = idx[order]

    cam_center = view.pose.camera_center()
    vvec = scene.means[idx] - cam_center
    vnorm = np.linalg.norm(vvec, axis=1)
    dirs = vvec / np.maximum(vnorm, 1e-12)[:, None]
    basis = shlib.sh_basis(dirs, scene.active_sh_degree)
    raw = 0.5 + np.einsum("nb,nbc->nc", basis, scene.sh[idx][:, :basis.shape[1], :])
    colors = np.maximum(raw, 0.0)

    a, b, c, det = a[sel], b[sel], c[sel], det[sel]
    inv_cov = np.stack([c / det, -b / det, a / det], axis=1)
    return dict(
        idx=idx, means2d=np.stack([u[sel], v[sel]], axis=1),
        cov2d=np.stack([a, b, c], axis=1), inv_cov=inv_cov,
        opacities=sigmoid(scene.opacity_logits[idx]),
        colors=colors, clamp_mask=raw > 0.0, zs=z[sel], radii=radius[sel],
        t_cam=t_cam[sel], proj_mat=M[sel], cov3d=cov3d[sel],
        dirs=dirs, dir_norms=vnorm, basis=basis,
        quats=scene.quats[idx].copy(), log_scales=scene.log_scales[idx].copy(),
    )


def _bin_tiles(p, width: int, height: int):
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    n_tiles = tiles_x * tiles_y
    u, v = p["means2d"][:, 0], p["means2d"][:, 1]
    r = p["radii"]
    tx0 = np.clip(np.floor((u - r) / TILE), 0, tiles_x - 1).astype(np.int64)
    tx1 = np.clip(np.floor((u + r) / TILE), 0, tiles_x - 1).astype(np.int64)
    ty0 = np.clip(np.floor((v - r) / TILE), 0, tiles_y - 1).astype(np.int64)
    ty1 = np.clip(np.floor((v + r) / TILE), 0, tiles_y - 1).astype(np.int64)
    total = int(np.sum((tx1 - tx0 + 1) * (ty1 - ty0 + 1)))
    entries_tile = np.empty(total, dtype=np.int64)
    entries_g = np.empty(total, dtype=np.int64)
    _expand_bins(tx0, tx1, ty0, ty1, tiles_x, entries_tile, entries_g)
    order = np.argsort(entries_tile, kind="stable")  # keeps depth order per tile
    entries_tile = entries_tile[order]
    entries = entries_g[order]
    offsets = np.searchsorted(entries_tile, np.arange(n_tiles + 1)).astype(np.int64)
    return entries, offsets, tiles_x


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------

def render_forward(scene: GaussianScene, view: CameraView, *,
                   term_threshold: float = 1e-4, alpha_skip: float = 1.0 / 255.0,
                   max_sigma: float = MAX_SIGMA, floor: float = COV2D_FLOOR,
                   depth_alpha_normalize: bool = False,
                   with_contrib: bool = False) -> tuple[RenderBuffers, RenderState]:
    H, W = view.intrinsics.height, view.intrinsics.width
    color = np.zeros((H, W, 3))
    depth = np.zeros((H, W))
    alpha = np.zeros((H, W))
    final_t = np.ones((H, W))
    n_contrib = np.zeros((H, W), dtype=np.int64)

    p = _project_scene(scene, view, max_sigma, floor)
    if p is None:
        entries = np.zeros(0, dtype=np.int64)
        tiles_x = (W + TILE - 1) // TILE
        n_tiles = tiles_x * ((H + TILE - 1) // TILE)
        offsets = np.zeros(n_tiles + 1, dtype=np.int64)
        p = dict(idx=np.zeros(0, dtype=np.int64), means2d=np.zeros((0, 2)),
                 cov2d=np.zeros((0, 3)), inv_cov=np.zeros((0, 3)),
                 opacities=np.zeros(0), colors=np.zeros((0, 3)),
                 clamp_mask=np.zeros((0, 3), dtype=bool), zs=np.zeros(0),
                 radii=np.zeros(0), t_cam=np.zeros((0, 3)),
                 proj_mat=np.zeros((0, 2, 3)), cov3d=np.zeros((0, 3, 3)),
                 dirs=np.zeros((0, 3)), dir_norms=np.zeros(0),
                 basis=np.zeros((0, shlib.num_coeffs(scene.active_sh_degree))),
                 quats=np.zeros((0, 4)), log_scales=np.zeros((0, 3)))
    else:
        entries, offsets, tiles_x = _bin_tiles(p, W, H)
        _forward_kernel(entries, offsets, tiles_x, H, W,
                        p["means2d"][:, 0].copy(), p["means2d"][:, 1].copy(),
                        p["inv_cov"][:, 0].copy(), p["inv_cov"][:, 1].copy(),
                        p["inv_cov"][:, 2].copy(), p["opacities"],
                        np.ascontiguousarray(p["colors"]), p["zs"], p["radii"],
                        term_threshold, alpha_skip, max_sigma,
                        color, depth, alpha, final_t, n_contrib)

    raw_depth = depth
    if depth_alpha_normalize:
        depth = np.where(alpha > 1e-12, raw_depth / np.maximum(alpha, 1e-12), 0.0)

    state = RenderState(
        view=view, scene_version=scene.version, n_gaussians=len(scene),
        sh_degree=scene.active_sh_degree,
        entries=entries, tile_offsets=offsets,
        tiles_x=(W + TILE - 1) // TILE,
        final_t=final_t, n_contrib=n_contrib,
        raw_depth=raw_depth, raw_alpha=alpha,
        term_threshold=term_threshold, alpha_skip=alpha_skip, max_sigma=max_sigma,
        depth_alpha_normalize=depth_alpha_normalize, **p)
    buffers = RenderBuffers(color=color, depth=depth, alpha=alpha.copy(),
                            contrib=n_contrib.copy() if with_contrib else None)
    return buffers, state


def render_backward(scene: GaussianScene, state: RenderState,
                    grads: GradBuffers) -> ParamGrads:
    """Chain upstream pixel gradients back to every Gaussian parameter."""
    if scene.version != state.scene_version or len(scene) != state.n_gaussians:
        raise StateMismatch("scene was mutated since render_forward")
    out = ParamGrads.zeros_like(scene)
    vcount = state.idx.size
    if vcount == 0:
        return out

    d_depth = np.asarray(grads.d_depth, dtype=np.float64)
    d_alpha = np.asarray(grads.d_alpha, dtype=np.float64).copy()
    if state.depth_alpha_normalize:
        backed = state.raw_alpha > 1e-12
        safe_a = np.maximum(state.raw_alpha, 1e-12)
        d_alpha += np.where(backed, -state.raw_depth / safe_a ** 2 * d_depth, 0.0)
        d_depth = np.where(backed, d_depth / safe_a, 0.0)

    g_color = np.zeros((vcount, 3))
    g_opac = np.zeros(vcount)
    g_ia = np.zeros(vcount)
    g_ib = np.zeros(vcount)
    g_ic = np.zeros(vcount)
    g_u = np.zeros(vcount)
    g_v = np.zeros(vcount)
    g_z = np.zeros(vcount)
    seen = np.zeros(vcount, dtype=np.bool_)
    H, W = state.view.intrinsics.height, state.view.intrinsics.width
    _backward_kernel(state.entries, state.tile_offsets, state.tiles_x, H, W,
                     state.means2d[:, 0].copy(), state.means2d[:, 1].copy(),
                     state.inv_cov[:, 0].copy(), state.inv_cov[:, 1].copy(),
                     state.inv_cov[:, 2].copy(), state.opacities,
                     np.ascontiguousarray(state.colors), state.zs, state.radii,
                     state.alpha_skip, state.max_sigma,
                     state.final_t, state.n_contrib,
                     np.ascontiguousarray(grads.d_color, dtype=np.float64),
                     np.ascontiguousarray(d_depth),
                     np.ascontiguousarray(d_alpha),
                     g_color, g_opac, g_ia, g_ib, g_ic, g_u, g_v, g_z, seen)

    idx = state.idx
    k = state.view.intrinsics
    R = state.view.pose.rotation

    # opacity logit
    o = state.opacities
    out.opacity_logits[idx] = g_opac * o * (1.0 - o)

    # SH coefficients and view-direction chain
    gc = g_color * state.clamp_mask
    nb = state.basis.shape[1]
    out.sh[idx, :nb, :] = state.basis[:, :, None] * gc[:, None, :]
    bgrad = shlib.sh_basis_grad(state.dirs, state.sh_degree)  # (V, B, 3)
    # d color / d dir summed over channels and bands
    ddir = np.einsum("nc,nbc,nbd->nd", gc, scene.sh[idx][:, :nb, :], bgrad)
    ddir -= state.dirs * np.sum(ddir * state.dirs, axis=1, keepdims=True)
    d_means_dir = ddir / np.maximum(state.dir_norms, 1e-12)[:, None]

    # inverse-covariance -> 2D covariance
    A = np.empty((vcount, 2, 2))
    A[:, 0, 0] = state.inv_cov[:, 0]
    A[:, 0, 1] = A[:, 1, 0] = state.inv_cov[:, 1]
    A[:, 1, 1] = state.inv_cov[:, 2]
    G = np.empty((vcount, 2, 2))
    G[:, 0, 0] = g_ia
    G[:, 0, 1] = G[:, 1, 0] = 0.5 * g_ib
    G[:, 1, 1] = g_ic
    d_cov2d = -np.einsum("nij,njk,nkl->nil", A, G, A)

    # 2D covariance -> world covariance and projection matrix M = J R
    M = state.proj_mat
    d_cov3d = np.einsum("nji,njk,nkl->nil", M, d_cov2d, M)
    d_M = 2.0 * np.einsum("nij,njk,nkl->nil", d_cov2d, M, state.cov3d)
    d_J = np.einsum("nij,kj->nik", d_M, R)

    # world covariance -> quaternion and log-scale
    Rg = _quat_rotations(state.quats)
    D = np.exp(2.0 * state.log_scales)
    inner = np.einsum("nji,njk,nkl->nil", Rg, d_cov3d, Rg)
    out.log_scales[idx] = 2.0 * D * np.einsum("nii->ni", inner)
    d_R = 2.0 * np.einsum("nij,njk,nk->nik", d_cov3d, Rg, D)
    out.quats[idx] = _rotation_grad_to_quat(state.quats, d_R)

    # screen position, depth, and Jacobian -> camera-space mean
    tx, ty, tz = state.t_cam[:, 0], state.t_cam[:, 1], state.t_cam[:, 2]
    d_t = np.zeros((vcount, 3))
    d_t[:, 0] = g_u * k.fx / tz
    d_t[:, 1] = g_v * k.fy / tz
    d_t[:, 2] = -g_u * k.fx * tx / tz ** 2 - g_v * k.fy * ty / tz ** 2 + g_z
    d_t[:, 0] += d_J[:, 0, 2] * (-k.fx / tz ** 2)
    d_t[:, 1] += d_J[:, 1, 2] * (-k.fy / tz ** 2)
    d_t[:, 2] += (d_J[:, 0, 0] * (-k.fx / tz ** 2)
                  + d_J[:, 1, 1] * (-k.fy / tz ** 2)
                  + d_J[:, 0, 2] * (2.0 * k.fx * tx / tz ** 3)
                  + d_J[:, 1, 2] * (2.0 * k.fy * ty / tz ** 3))

    out.means[idx] = d_t @ R + d_means_dir
    out.pos2d[idx, 0] = g_u
    out.pos2d[idx, 1] = g_v
    out.seen[idx] = seen
    return out


def _quat_rotations(q: np.ndarray) -> np.ndarray:
    from .geometry import quat_to_rotation

    return quat_to_rotation(q)


def _rotation_grad_to_quat(quats: np.ndarray, d_R: np.ndarray) -> np.ndarray:
    """Chain dL/dR through R(q/|q|) for unit-stored quaternions (V, 4)."""
    w, x, y, z = quats[:, 0], quats[:, 1], quats[:, 2], quats[:, 3]
    g = d_R
    dw = 2.0 * (-g[:, 0, 1] * z + g[:, 0, 2] * y + g[:, 1, 0] * z
                - g[:, 1, 2] * x - g[:, 2, 0] * y + g[:, 2, 1] * x)
    dx = 2.0 * (g[:, 0, 1] * y + g[:, 0, 2] * z + g[:, 1, 0] * y
                - 2.0 * g[:, 1, 1] * x - g[:, 1, 2] * w + g[:, 2, 0] * z
                + g[:, 2, 1] * w - 2.0 * g[:, 2, 2] * x)
    dy = 2.0 * (-2.0 * g[:, 0, 0] * y + g[:, 0, 1] * x + g[:, 0, 2] * w
                + g[:, 1, 0] * x + g[:, 1, 2] * z - g[:, 2, 0] * w
                + g[:, 2, 1] * z - 2.0 * g[:, 2, 2] * y)
    dz = 2.0 * (-2.0 * g[:, 0, 0] * z - g[:, 0, 1] * w + g[:, 0, 2] * x
                + g[:, 1, 0] * w - 2.0 * g[:, 1, 1] * z + g[:, 1, 2] * y
                + g[:, 2, 0] * x + g[:, 2, 1] * y)
    dq = np.stack([dw, dx, dy, dz], axis=1)
    # normalization projection (stored quats have unit norm)
    return dq - quats * np.sum(dq * quats, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------

def render_forward_reference(scene: GaussianScene, view: CameraView, *,
                             alpha_skip: float = 1.0 / 255.0,
                             max_sigma: float = MAX_SIGMA,
                             floor: float = COV2D_FLOOR) -> RenderBuffers:
    """Per-pixel compositor with a full sort and no tiling or early exits.

    Shares only the verified geometry primitives with the fast path; the
    compositing loop is written directly from the blending formulas.
    """
    from .geometry import splat_cov2d
    from .scene import compose_covariance, eval_sh_color

    k = view.intrinsics
    H, W = k.height, k.width
    R, tvec = view.pose.rotation, view.pose.translation
    cam_center = view.pose.camera_center()

    rows = []
    for i in range(len(scene)):
        g = scene.gaussian(i)
        pc = R @ g.mean + tvec
        if pc[2] <= view.near:
            continue
        rows.append((pc[2], i, pc))
    rows.sort(key=lambda r: (r[0], r[1]))

    ys, xs = np.mgrid[0:H, 0:W]
    color = np.zeros((H, W, 3))
    depth = np.zeros((H, W))
    alpha_acc = np.zeros((H, W))
    T = np.ones((H, W))
    for z, i, pc in rows:
        g = scene.gaussian(i)
        cov2d = splat_cov2d(view, g.mean, compose_covariance(g), floor=floor)
        inv = np.linalg.inv(cov2d)
        lam_max = np.linalg.eigvalsh(cov2d)[-1]
        radius = np.ceil(np.sqrt(2.0 * min(max_sigma, 1e6) * lam_max)) + 1.0
        u = k.fx * pc[0] / z + k.cx
        v = k.fy * pc[1] / z + k.cy
        if (u + radius < 0 or u - radius > W - 1 or v + radius < 0 or v - radius > H - 1):
            continue
        dvec = np.linalg.norm(g.mean - cam_center)
        direction = (g.mean - cam_center) / max(dvec, 1e-12)
        c = eval_sh_color(g, direction, degree=scene.active_sh_degree)

        dx = u - xs
        dy = v - ys
        sig = 0.5 * (inv[0, 0] * dx ** 2 + inv[1, 1] * dy ** 2) + inv[0, 1] * dx * dy
        inside = ((np.abs(dx) <= radius) & (np.abs(dy) <= radius)
                  & (sig >= 0.0) & (sig <= max_sigma))
        a = np.where(inside, g.opacity * np.exp(-sig), 0.0)
        a = np.where(a >= alpha_skip, a, 0.0)
        w = a * T
        color += w[:, :, None] * c[None, None, :]
        depth += w * z
        alpha_acc += w
        T = T * (1.0 - a)
    return RenderBuffers(color=color, depth=depth, alpha=alpha_acc)

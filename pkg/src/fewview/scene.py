"""Gaussian scene container: parameterization, neighborhoods, density control.

The scene stores parameters as flat arrays (one row per Gaussian), which is
what every numerical routine here operates on. `Gaussian3D` is the one-row
view used at API boundaries and in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sh as shlib
from .errors import EmptyScene, ParseError, TooFewGaussians
from .geometry import quat_normalize, quat_to_rotation


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def inverse_sigmoid(y):
    return np.log(y) - np.log1p(-y)


@dataclass
class Gaussian3D:
    """A single scene primitive.

    Covariance is exp(log_scale) per axis rotated by the unit quaternion;
    opacity is sigmoid(opacity_logit); `sh` holds (num_coeffs, 3) spherical
    harmonic coefficients for view-dependent color.
    """

    mean: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    log_scale: np.ndarray
    opacity_logit: float
    sh: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.rotation = quat_normalize(np.asarray(self.rotation, dtype=np.float64).reshape(4))
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        self.sh = np.asarray(self.sh, dtype=np.float64).reshape(-1, 3)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))


class GaussianScene:
    """All Gaussians of a scene, stored as arrays of shape (N, ...).

    Mutating operations (density control, optimizer steps through
    `bump_version`) increment `version` so stale renderer state can be
    detected.
    """

    def __init__(self, means, quats, log_scales, opacity_logits, sh, sh_degree: int,
                 active_sh_degree: int | None = None):
        self.means = np.ascontiguousarray(means, dtype=np.float64).reshape(-1, 3)
        n = self.means.shape[0]
        self.quats = quat_normalize(
            np.ascontiguousarray(quats, dtype=np.float64).reshape(n, 4))
        self.log_scales = np.ascontiguousarray(log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.ascontiguousarray(
            opacity_logits, dtype=np.float64).reshape(n)
        self.sh = np.ascontiguousarray(sh, dtype=np.float64).reshape(
            n, shlib.num_coeffs(sh_degree), 3)
        self.sh_degree = int(sh_degree)
        self.active_sh_degree = self.sh_degree if active_sh_degree is None else int(active_sh_degree)
        self.pos_grad_sum = np.zeros(n)
        self.pos_grad_count = np.zeros(n)
        self.version = 0

    def __len__(self) -> int:
        return self.means.shape[0]

    @staticmethod
    def from_gaussians(gaussians: list[Gaussian3D], sh_degree: int) -> "GaussianScene":
        nc = shlib.num_coeffs(sh_degree)
        for g in gaussians:
            if g.sh.shape[0] != nc:
                raise ValueError(f"expected {nc} sh coefficients, got {g.sh.shape[0]}")
        return GaussianScene(
            means=np.array([g.mean for g in gaussians]),
            quats=np.array([g.rotation for g in gaussians]),
            log_scales=np.array([g.log_scale for g in gaussians]),
            opacity_logits=np.array([g.opacity_logit for g in gaussians]),
            sh=np.array([g.sh for g in gaussians]),
            sh_degree=sh_degree,
        )

    def gaussian(self, i: int) -> Gaussian3D:
        return Gaussian3D(self.means[i], self.quats[i], self.log_scales[i],
                          float(self.opacity_logits[i]), self.sh[i])

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def bump_version(self):
        self.version += 1

    def normalize_quats(self):
        self.quats = quat_normalize(self.quats)

    def copy(self) -> "GaussianScene":
        s = GaussianScene(self.means.copy(), self.quats.copy(), self.log_scales.copy(),
                          self.opacity_logits.copy(), self.sh.copy(), self.sh_degree,
                          self.active_sh_degree)
        s.pos_grad_sum = self.pos_grad_sum.copy()
        s.pos_grad_count = self.pos_grad_count.copy()
        return s

    def accumulate_pos_grads(self, norms: np.ndarray, seen: np.ndarray):
        """Add per-Gaussian 2D positional gradient norms for density control."""
        self.pos_grad_sum += np.where(seen, norms, 0.0)
        self.pos_grad_count += seen.astype(np.float64)

    def reset_pos_grads(self):
        self.pos_grad_sum = np.zeros(len(self))
        self.pos_grad_count = np.zeros(len(self))


# ---------------------------------------------------------------------------
# Covariance and color
# ---------------------------------------------------------------------------

def compose_covariance(g: Gaussian3D) -> np.ndarray:
    """3x3 covariance R S S^T R^T of a single Gaussian."""
    R = quat_to_rotation(g.rotation)
    d = np.exp(2.0 * g.log_scale)
    return (R * d) @ R.T


def compose_covariances(scene: GaussianScene) -> np.ndarray:
    """(N, 3, 3) covariances for the whole scene."""
    R = quat_to_rotation(scene.quats)
    d = np.exp(2.0 * scene.log_scales)
    return np.einsum("nij,nj,nkj->nik", R, d, R)


def eval_sh_color(g: Gaussian3D, view_dir: np.ndarray, degree: int | None = None) -> np.ndarray:
    """View-dependent RGB of one Gaussian, clamped to [0, inf)."""
    view_dir = np.asarray(view_dir, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(view_dir) - 1.0) > 1e-6:
        raise ValueError("view_dir must be a unit vector")
    if degree is None:
        degree = int(round(np.sqrt(g.sh.shape[0]))) - 1
    basis = shlib.sh_basis(view_dir[None], degree)[0]
    nc = basis.shape[0]
    c = 0.5 + basis @ g.sh[:nc]
    return np.maximum(c, 0.0)


def eval_sh_colors(scene: GaussianScene, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Colors for all Gaussians at unit directions (N, 3).

    Returns (clamped colors (N, 3), pre-clamp values (N, 3)).
    """
    deg = scene.active_sh_degree
    basis = shlib.sh_basis(dirs, deg)
    raw = 0.5 + np.einsum("nb,nbc->nc", basis, scene.sh[:, :basis.shape[1], :])
    return np.maximum(raw, 0.0), raw


def dc_colors(scene: GaussianScene) -> tuple[np.ndarray, np.ndarray]:
    """View-independent (degree-0) colors; returns (clamped, pre-clamp)."""
    raw = 0.5 + shlib.C0 * scene.sh[:, 0, :]
    return np.maximum(raw, 0.0), raw


# ---------------------------------------------------------------------------
# Neighborhoods
# ---------------------------------------------------------------------------

_BRUTE_FORCE_LIMIT = 2000


def knn_neighbors(scene: GaussianScene, k: int) -> np.ndarray:
    """Indices (N, k) of each Gaussian's k nearest neighbors (excluding itself).

    Ties are broken toward the lower index. Exact brute force is used for
    small scenes; a KD-tree above _BRUTE_FORCE_LIMIT.
    """
    n = len(scene)
    if n <= k:
        raise TooFewGaussians(f"need more than k={k} Gaussians, have {n}")
    if n <= _BRUTE_FORCE_LIMIT:
        d2 = np.sum((scene.means[:, None, :] - scene.means[None, :, :]) ** 2, axis=-1)
        np.fill_diagonal(d2, np.inf)
        # stable sort keeps equal distances in ascending-index order
        return np.argsort(d2, axis=1, kind="stable")[:, :k]
    from scipy.spatial import cKDTree

    tree = cKDTree(scene.means)
    _, idx = tree.query(scene.means, k=k + 1)
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        row = idx[i][idx[i] != i][:k]
        out[i] = row
    return out


# ---------------------------------------------------------------------------
# Adaptive density control
# ---------------------------------------------------------------------------

@dataclass
class DensifyThresholds:
    grad: float = 2e-4        # mean 2D positional gradient that triggers densify
    prune_opacity: float = 0.005
    scale: float = 0.01       # fraction of scene extent separating clone from split
    split_factor: float = 1.6
    interval: int = 100


@dataclass
class DensifyReport:
    """Index bookkeeping so optimizer moments can track scene mutation."""

    keep_indices: np.ndarray   # rows of the old scene that survive, in order
    n_added: int               # new Gaussians appended after the kept rows
    n_pruned: int
    n_cloned: int
    n_split: int


def adaptive_density_control(scene: GaussianScene, thresholds: DensifyThresholds,
                             scene_extent: float, rng: np.random.Generator,
                             max_new: int | None = None) -> DensifyReport:
    """Clone/split high-gradient Gaussians and prune near-transparent ones.

    Mutates the scene in place; gradient accumulators are reset. The new
    scene layout is [kept rows..., clones..., split children...]. When
    `max_new` is given, at most that many Gaussians are added net; the
    highest-gradient candidates win.
    """
    n = len(scene)
    if n == 0:
        raise EmptyScene("cannot densify an empty scene")
    counts = np.maximum(scene.pos_grad_count, 1.0)
    avg_grad = scene.pos_grad_sum / counts
    high = avg_grad > thresholds.grad
    max_scale = scene.scales.max(axis=1)
    small = max_scale < thresholds.scale * scene_extent
    prune = scene.opacities < thresholds.prune_opacity
    clone = high & small & ~prune
    split = high & ~small & ~prune

    if max_new is not None:
        # clones and splits each add one Gaussian net
        cand = np.flatnonzero(clone | split)
        if cand.size > max(max_new, 0):
            demote = cand[np.argsort(-avg_grad[cand])][max(max_new, 0):]
            clone[demote] = False
            split[demote] = False

    keep = ~prune & ~split
    keep_indices = np.flatnonzero(keep)

    parts = {name: [getattr(scene, name)[keep]] for name in
             ("means", "quats", "log_scales", "opacity_logits", "sh")}

    clone_idx = np.flatnonzero(clone & keep)
    for name in parts:
        parts[name].append(getattr(scene, name)[clone_idx])

    split_idx = np.flatnonzero(split)
    if split_idx.size:
        cov = compose_covariances(scene)[split_idx]
        L = np.linalg.cholesky(cov + 1e-18 * np.eye(3))
        for _ in range(2):
            eps = rng.standard_normal((split_idx.size, 3))
            child_means = scene.means[split_idx] + np.einsum("nij,nj->ni", L, eps)
            parts["means"].append(child_means)
            parts["quats"].append(scene.quats[split_idx])
            parts["log_scales"].append(
                scene.log_scales[split_idx] - np.log(thresholds.split_factor))
            parts["opacity_logits"].append(scene.opacity_logits[split_idx])
            parts["sh"].append(scene.sh[split_idx])

    scene.means = np.concatenate(parts["means"], axis=0)
    scene.quats = np.concatenate(parts["quats"], axis=0)
    scene.log_scales = np.concatenate(parts["log_scales"], axis=0)
    scene.opacity_logits = np.concatenate(parts["opacity_logits"], axis=0)
    scene.sh = np.concatenate(parts["sh"], axis=0)
    scene.reset_pos_grads()
    scene.bump_version()

    return DensifyReport(
        keep_indices=keep_indices,
        n_added=len(scene) - keep_indices.size,
        n_pruned=int(np.count_nonzero(prune & ~split)),
        n_cloned=clone_idx.size,
        n_split=split_idx.size,
    )


# ---------------------------------------------------------------------------
# Checkpoint I/O (binary little-endian PLY, 3DGS property layout)
# ---------------------------------------------------------------------------

def save_ply(scene: GaussianScene, path):
    n = len(scene)
    n_rest = scene.sh.shape[1] - 1
    names = (["x", "y", "z"]
             + [f"f_dc_{i}" for i in range(3)]
             + [f"f_rest_{i}" for i in range(3 * n_rest)]
             + ["opacity"]
             + [f"scale_{i}" for i in range(3)]
             + [f"rot_{i}" for i in range(4)])
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")

    cols = [scene.means, scene.sh[:, 0, :]]
    if n_rest:
        # channel-major f_rest layout: index = channel * n_rest + coeff
        cols.append(scene.sh[:, 1:, :].transpose(0, 2, 1).reshape(n, 3 * n_rest))
    cols += [scene.opacity_logits[:, None], scene.log_scales, scene.quats]
    data = np.concatenate(cols, axis=1).astype("<f4")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(data.tobytes())


def load_ply(path) -> GaussianScene:
    with open(path, "rb") as f:
        blob = f.read()
    end = blob.find(b"end_header\n")
    if end < 0:
        raise ParseError("missing end_header")
    header_lines = blob[:end].decode("ascii", errors="replace").splitlines()
    if not header_lines or header_lines[0].strip() != "ply":
        raise ParseError("not a PLY file")

    n = None
    names = []
    fmt_ok = False
    for line in header_lines[1:]:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt_ok = tok[1] == "binary_little_endian"
        elif tok[0] == "element":
            if tok[1] != "vertex":
                raise ParseError(f"unsupported element {tok[1]}")
            n = int(tok[2])
        elif tok[0] == "property":
            if tok[1] != "float":
                raise ParseError(f"unsupported property type {tok[1]}")
            names.append(tok[2])
    if not fmt_ok or n is None:
        raise ParseError("expected binary_little_endian vertex PLY")

    payload = blob[end + len(b"end_header\n"):]
    expected = n * len(names) * 4
    if len(payload) < expected:
        raise ParseError(f"payload truncated: {len(payload)} < {expected} bytes")
    data = np.frombuffer(payload[:expected], dtype="<f4").reshape(n, len(names))
    col = {name: i for i, name in enumerate(names)}

    def take(keys):
        try:
            return data[:, [col[k] for k in keys]].astype(np.float64)
        except KeyError as e:
            raise ParseError(f"missing property {e}") from None

    means = take(["x", "y", "z"])
    f_dc = take(["f_dc_0", "f_dc_1", "f_dc_2"])
    n_rest = sum(1 for k in names if k.startswith("f_rest_")) // 3
    degree = int(round(np.sqrt(n_rest + 1))) - 1
    if shlib.num_coeffs(degree) != n_rest + 1:
        raise ParseError(f"f_rest count {3 * n_rest} is not a valid SH layout")
    sh = np.zeros((n, n_rest + 1, 3))
    sh[:, 0, :] = f_dc
    if n_rest:
        rest = take([f"f_rest_{i}" for i in range(3 * n_rest)])
        sh[:, 1:, :] = rest.reshape(n, 3, n_rest).transpose(0, 2, 1)
    return GaussianScene(
        means=means,
        quats=take(["rot_0", "rot_1", "rot_2", "rot_3"]),
        log_scales=take(["scale_0", "scale_1", "scale_2"]),
        opacity_logits=take(["opacity"])[:, 0],
        sh=sh,
        sh_degree=degree,
    )

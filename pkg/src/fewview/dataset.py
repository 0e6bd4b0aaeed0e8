"""Dataset loading, toy-scene generation, and image/metric export.

A dataset directory holds a Blender-style `transforms.json` plus the
referenced PNG images. `transform_matrix` entries are 4x4 row-major
camera-to-world transforms in this library's camera convention
(+x right, +y down, +z forward, pixel centers on integer coordinates);
they are inverted into world-to-camera poses on load.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import regularization as reg
from .correspondence import MatchSet
from .errors import DegenerateIntrinsics, MissingImage, ParseError, ShapeMismatch
from .geometry import CameraView, Intrinsics, Pose
from .renderer import render_forward
from .scene import GaussianScene, inverse_sigmoid

PSNR_CAP = 99.0


def worker_count() -> int:
    """Worker threads for image I/O; FEWVIEW_THREADS overrides."""
    env = os.environ.get("FEWVIEW_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(8, os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# Dataset container
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    views: list            # CameraView per frame
    images: list           # (H, W, 3) float64 in [0, 1] per frame
    splits: list           # "train" / "test" per frame
    names: list            # file_path stems, for export
    scene_extent: float
    features: list = field(default_factory=list)  # optional FeatureMap per frame

    def __post_init__(self):
        if len(self.views) != len(self.images) or len(self.views) != len(self.splits):
            raise ValueError("views/images/splits lengths differ")
        if not any(s == "train" for s in self.splits):
            raise ValueError("dataset needs at least one training view")
        if not self.scene_extent > 0:
            raise ValueError("scene_extent must be positive")

    def __len__(self) -> int:
        return len(self.views)

    def indices(self, split: str) -> list:
        return [i for i, s in enumerate(self.splits) if s == split]

    @property
    def train_indices(self) -> list:
        return self.indices("train")

    @property
    def test_indices(self) -> list:
        return self.indices("test")

    def view_sizes(self) -> list:
        return [(v.intrinsics.width, v.intrinsics.height) for v in self.views]


@dataclass
class MetricsReport:
    """Held-out image quality plus whatever pipeline statistics apply."""

    per_view_psnr: list
    per_view_ssim: list
    mean_psnr: float
    mean_ssim: float
    stats: dict = field(default_factory=dict)
    notes: str = "full-frame metrics; no background masking"


def compute_psnr(rendered: np.ndarray, target: np.ndarray) -> float:
    if rendered.shape != target.shape:
        raise ShapeMismatch(f"{rendered.shape} vs {target.shape}")
    mse = float(np.mean((np.clip(rendered, 0.0, 1.0) - target) ** 2))
    if mse <= 10 ** (-PSNR_CAP / 10.0):
        return PSNR_CAP
    return -10.0 * math.log10(mse)


def compute_metrics(rendered_list, target_list, stats=None) -> MetricsReport:
    psnrs, ssims = [], []
    for rendered, target in zip(rendered_list, target_list):
        psnrs.append(compute_psnr(rendered, target))
        ssims.append(reg.ssim(np.clip(rendered, 0.0, 1.0), target))
    return MetricsReport(psnrs, ssims, float(np.mean(psnrs)), float(np.mean(ssims)),
                         stats=stats or {})


# ---------------------------------------------------------------------------
# Image / depth files
# ---------------------------------------------------------------------------

def load_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as e:
        raise MissingImage(f"cannot read image {path}: {e}") from e
    return arr / 255.0


def save_png(path, image: np.ndarray):
    q = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path)


def save_pfm(path, depth: np.ndarray):
    """Grayscale PFM, little-endian (negative scale), bottom row first."""
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(depth[::-1], dtype="<f4").tobytes())


def load_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    try:
        head, dims, scale, rest = blob.split(b"\n", 3)
        w, h = (int(t) for t in dims.split())
        scale = float(scale)
    except ValueError as e:
        raise ParseError(f"bad PFM header in {path}: {e}") from e
    if head != b"Pf":
        raise ParseError(f"{path}: only grayscale PFM supported")
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h
    if len(rest) < 4 * n:
        raise ParseError(f"{path}: truncated PFM payload")
    data = np.frombuffer(rest[:4 * n], dtype=dtype).reshape(h, w)
    return data[::-1].astype(np.float64)


# ---------------------------------------------------------------------------
# transforms.json
# ---------------------------------------------------------------------------

def _intrinsics_from_doc(doc: dict, frame: dict) -> Intrinsics:
    def pick(key, default=None):
        return frame.get(key, doc.get(key, default))

    w, h = pick("w"), pick("h")
    if w is None or h is None:
        raise ParseError("transforms.json must provide w and h")
    w, h = int(w), int(h)
    if pick("fl_x") is not None:
        fx = float(pick("fl_x"))
        fy = float(pick("fl_y", fx))
    elif pick("camera_angle_x") is not None:
        fx = fy = 0.5 * w / math.tan(0.5 * float(pick("camera_angle_x")))
    else:
        raise ParseError("transforms.json needs fl_x/fl_y or camera_angle_x")
    cx = float(pick("cx", 0.5 * (w - 1)))
    cy = float(pick("cy", 0.5 * (h - 1)))
    try:
        return Intrinsics(fx, fy, cx, cy, w, h)
    except DegenerateIntrinsics:
        raise
    except Exception as e:  # noqa: BLE001 - surface as a typed error
        raise DegenerateIntrinsics(str(e)) from e


def _scene_extent(views) -> float:
    centers = np.array([v.pose.camera_center() for v in views])
    mid = centers.mean(axis=0)
    radius = float(np.max(np.linalg.norm(centers - mid, axis=1))) if len(views) else 0.0
    return max(radius, 1e-3) * 1.1


def load_dataset(directory) -> Dataset:
    path = os.path.join(directory, "transforms.json")
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        frames = doc["frames"]
    except OSError as e:
        raise ParseError(f"cannot open {path}: {e}") from e
    except (ValueError, KeyError, TypeError) as e:
        raise ParseError(f"malformed transforms.json: {e}") from e

    views, splits, names, paths = [], [], [], []
    for frame in frames:
        try:
            mat = np.asarray(frame["transform_matrix"], dtype=np.float64).reshape(4, 4)
            file_path = frame["file_path"]
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"malformed frame entry: {e}") from e
        intr = _intrinsics_from_doc(doc, frame)
        pose = Pose.from_camera_to_world(mat)
        views.append(CameraView(intr, pose))
        splits.append(str(frame.get("split", "train")))
        names.append(os.path.splitext(os.path.basename(file_path))[0])
        img_path = os.path.join(directory, file_path)
        if not os.path.splitext(img_path)[1]:
            img_path += ".png"
        if not os.path.exists(img_path):
            raise MissingImage(f"missing image file {img_path}")
        paths.append(img_path)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        images = list(pool.map(load_png, paths))
    for v, im in zip(views, images):
        if im.shape[:2] != (v.intrinsics.height, v.intrinsics.width):
            raise ParseError(
                f"image shape {im.shape[:2]} disagrees with intrinsics "
                f"({v.intrinsics.height}, {v.intrinsics.width})")
    return Dataset(views, images, splits, names, _scene_extent(views))


def export_dataset(dataset: Dataset, directory):
    os.makedirs(directory, exist_ok=True)
    frames = []
    for i, (view, image, split, name) in enumerate(zip(
            dataset.views, dataset.images, dataset.splits, dataset.names)):
        fname = f"{name or f'frame_{i:03d}'}.png"
        save_png(os.path.join(directory, fname), image)
        k = view.intrinsics
        c2w = view.pose.to_camera_to_world()
        frames.append({
            "file_path": fname, "split": split,
            "fl_x": k.fx, "fl_y": k.fy, "cx": k.cx, "cy": k.cy,
            "w": k.width, "h": k.height,
            "transform_matrix": c2w.tolist(),
        })
    with open(os.path.join(directory, "transforms.json"), "w", encoding="utf-8") as f:
        json.dump({"frames": frames}, f, indent=1)


# ---------------------------------------------------------------------------
# Toy scenes
# ---------------------------------------------------------------------------

@dataclass
class ToyParams:
    n_gaussians: int = 50
    image_size: int = 64
    n_train: int = 3
    n_test: int = 2
    arc_radius: float = 4.0
    arc_span: float = 0.9      # radians covered by all cameras
    cloud_radius: float = 0.8  # std of the Gaussian position cloud
    opacity: float = 0.97      # high opacity keeps blended depth near the surface
    match_grid_step: int = 1
    # Blended per-Gaussian depths disagree across views by O(footprint x
    # baseline); 2% of scene extent keeps the near-surface sixth of candidates.
    depth_agree_tol: float = 0.02


def _look_at_view(center: np.ndarray, target: np.ndarray, intr: Intrinsics) -> CameraView:
    fwd = target - center
    fwd = fwd / np.linalg.norm(fwd)
    up_hint = np.array([0.0, -1.0, 0.0])
    right = np.cross(up_hint, fwd)
    if np.linalg.norm(right) < 1e-8:
        right = np.array([1.0, 0.0, 0.0])
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    c2w = np.eye(4)
    c2w[:3, :3] = np.stack([right, down, fwd], axis=1)  # camera axes as world columns
    c2w[:3, 3] = center
    return CameraView(intr, Pose.from_camera_to_world(c2w))


def _toy_gt_scene(rng: np.random.Generator, p: ToyParams) -> GaussianScene:
    n = p.n_gaussians
    means = rng.normal(scale=p.cloud_radius, size=(n, 3))
    quats = rng.normal(size=(n, 4))
    scales = rng.uniform(0.06, 0.14, size=(n, 3))
    colors = rng.uniform(0.15, 0.95, size=(n, 3))
    sh = np.zeros((n, 1, 3))
    sh[:, 0, :] = (colors - 0.5) / 0.28209479177387814
    return GaussianScene(means, quats, np.log(scales),
                         np.full(n, inverse_sigmoid(p.opacity)), sh, sh_degree=0)


def _toy_matches(dataset: Dataset, depths, alphas, p: ToyParams) -> list:
    """Exact correspondences between consecutive train views.

    Grid pixels with solid coverage (alpha > 0.5) in view a are lifted with
    their rendered depth, reprojected into view b, and kept when view b's
    rendered depth at the landing pixel agrees (relative to scene extent)
    — a depth-based occlusion check.
    """
    from .consistency import _lift_world, _project  # shared vectorized warp math

    out = []
    train = dataset.train_indices
    tol = p.depth_agree_tol * dataset.scene_extent
    for a, b in zip(train, train[1:]):
        va, vb = dataset.views[a], dataset.views[b]
        h, w = depths[a].shape
        step = p.match_grid_step
        ys, xs = np.mgrid[0:h:step, 0:w:step]
        uv = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
        solid = alphas[a][ys.ravel(), xs.ravel()] > 0.5
        uv = uv[solid]
        za = depths[a][uv[:, 1].astype(int), uv[:, 0].astype(int)]
        world = _lift_world(va, uv, za)
        uvb, zb = _project(vb, world)
        ok = ((zb > vb.near)
              & (uvb[:, 0] >= 0) & (uvb[:, 0] <= w - 1)
              & (uvb[:, 1] >= 0) & (uvb[:, 1] <= h - 1))
        if not np.any(ok):
            continue
        from .imageops import bilinear_sample
        zb_seen = bilinear_sample(depths[b], uvb[ok])
        ab_seen = bilinear_sample(alphas[b], uvb[ok])
        agree = (np.abs(zb_seen - zb[ok]) < tol) & (ab_seen > 0.5)
        idx = np.flatnonzero(ok)[agree]
        if idx.size:
            rows = np.column_stack([uv[idx], uvb[idx], np.ones(idx.size)])
            out.append(MatchSet(a, b, rows))
    return out


def generate_toy_scene(seed: int, params: ToyParams | None = None
                       ) -> tuple[GaussianScene, Dataset, list]:
    """Self-contained test substrate: ground-truth scene, renders, matches.

    Deterministic in `seed`. Cameras sit on an arc looking at the origin;
    train and test poses interleave along the arc so held-out views stay
    inside the training baseline.
    """
    p = params or ToyParams()
    rng = np.random.default_rng(seed)
    gt = _toy_gt_scene(rng, p)

    intr = Intrinsics(1.2 * p.image_size, 1.2 * p.image_size,
                      0.5 * (p.image_size - 1), 0.5 * (p.image_size - 1),
                      p.image_size, p.image_size)
    n_views = p.n_train + p.n_test
    angles = np.linspace(-0.5 * p.arc_span, 0.5 * p.arc_span, n_views)
    split_pattern = []
    n_tr, n_te = p.n_train, p.n_test
    for i in range(n_views):
        # spread test views between train views
        want_test = n_te > 0 and (i % 2 == 1) and n_tr < n_views - i
        if want_test:
            split_pattern.append("test"); n_te -= 1
        else:
            split_pattern.append("train"); n_tr -= 1
    views, images, splits, names = [], [], [], []
    depths, alphas = [], []
    target = np.zeros(3)
    for i, ang in enumerate(angles):
        center = p.arc_radius * np.array([math.sin(ang), -0.15, -math.cos(ang)])
        view = _look_at_view(center, target, intr)
        buf, _ = render_forward(gt, view, depth_alpha_normalize=True)
        views.append(view)
        images.append(np.clip(buf.color, 0.0, 1.0))
        depths.append(buf.depth)
        alphas.append(buf.alpha)
        splits.append(split_pattern[i])
        names.append(f"toy_{i:02d}_{split_pattern[i]}")
    dataset = Dataset(views, images, splits, names, _scene_extent(views))
    matches = _toy_matches(dataset, depths, alphas, p)
    return gt, dataset, matches

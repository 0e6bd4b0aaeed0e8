"""Three-stage optimization: pre-training, novel-view consistency, tuning.

Pre-training and tuning fit the known views with a photometric loss plus
opacity and locality regularizers. The intermediate stage additionally
samples a pose between a matched pair of training views every iteration,
warps the pair's matches into it, and supervises the novel render's depth,
color, and features — keeping a downscaled known-view term alongside.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import regularization as reg
from .consistency import ConsistencyWeights, consistency_loss, warp_matches
from .consistency import sobel_gradient_magnitude
from .dataset import Dataset
from .errors import NonFiniteGradient, NoSurvivingMatches, ParseError
from .features import FilterbankProvider
from .geometry import CameraView, sample_intermediate_pose
from .imageops import bilinear_sample
from .renderer import GradBuffers, ParamGrads, render_backward, render_forward
from .scene import (DensifyThresholds, GaussianScene, adaptive_density_control,
                    inverse_sigmoid, knn_neighbors)
from .sh import C0, num_coeffs

PARAM_GROUPS = ("means", "quats", "log_scales", "opacity_logits", "sh")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15

STAGES = ("pretrain", "intermediate", "tune")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class StageSchedule:
    """Iteration counts and loss weights for the three stages."""

    iters_pretrain: int = 2000
    iters_intermediate: int = 7500
    iters_tune: int = 500
    lambda_photo: float = 1.0
    chi_opacity: float = 0.001
    zeta_locality: float = 0.001
    kappa_consistency: float = 1.0
    eta_pretrain: float = 0.05
    consistency: ConsistencyWeights = field(default_factory=ConsistencyWeights)

    def __post_init__(self):
        counts = (self.iters_pretrain, self.iters_intermediate, self.iters_tune)
        if any(c < 0 for c in counts):
            raise ValueError("stage iteration counts must be non-negative")
        weights = (self.lambda_photo, self.chi_opacity, self.zeta_locality,
                   self.kappa_consistency, self.eta_pretrain)
        if any(w < 0 for w in weights):
            raise ValueError("stage weights must be non-negative")

    @property
    def total(self) -> int:
        return self.iters_pretrain + self.iters_intermediate + self.iters_tune

    def stage_of(self, iteration: int) -> str:
        if iteration < self.iters_pretrain:
            return "pretrain"
        if iteration < self.iters_pretrain + self.iters_intermediate:
            return "intermediate"
        return "tune"


@dataclass
class TrainConfig:
    """Every knob of the pipeline, loadable from JSON or key=value lines."""

    # schedule
    iters_pretrain: int = 2000
    iters_intermediate: int = 7500
    iters_tune: int = 500
    single_stage: bool = False  # same losses every iteration, no stage split
    # stage weights
    lambda_photo: float = 1.0
    chi_opacity: float = 0.001
    zeta_locality: float = 0.001
    kappa_consistency: float = 1.0
    eta_pretrain: float = 0.05
    # consistency thresholds / term weights
    alpha_geom: float = 0.5
    beta_color: float = 0.05
    gamma_sem: float = 0.001
    theta_g: float = 10.0
    theta_grad: float = 0.1
    theta_px: float = 2.0
    # regularizers
    lambda_ssim: float = 0.2
    locality_k: int = 4
    locality_delta: float = 2.0
    locality_detach_means: bool = False
    # optimizer (mean lr scales with scene extent and decays exponentially)
    lr_means: float = 1.6e-4
    lr_means_final: float = 1.6e-6
    lr_sh_dc: float = 2.5e-3
    lr_sh_rest: float = 1.25e-4
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    # density control
    densify_grad: float = 2e-4
    densify_interval: int = 100
    densify_start: int = 500
    densify_stop_margin: int = 500  # stop this many iters before the tune stage
    prune_opacity: float = 0.005
    densify_scale: float = 0.01
    densify_split_factor: float = 1.6
    max_gaussians: int = 1_000_000
    # initialization
    n_init: int = 10000
    init_opacity: float = 0.1
    sh_degree: int = 3
    sh_degree_interval: int = 1000
    # sampling
    novel_t_min: float = 0.1
    novel_t_max: float = 0.9
    pair_policy: str = "uniform"  # uniform over available match pairs
    # plumbing
    feature_provider: str = "filterbank"  # or "none"
    seed: int = 0
    log_interval: int = 10
    checkpoint_interval: int = 2000

    def schedule(self) -> StageSchedule:
        return StageSchedule(
            self.iters_pretrain, self.iters_intermediate, self.iters_tune,
            self.lambda_photo, self.chi_opacity, self.zeta_locality,
            self.kappa_consistency, self.eta_pretrain, self.consistency_weights())

    def consistency_weights(self) -> ConsistencyWeights:
        return ConsistencyWeights(self.alpha_geom, self.beta_color, self.gamma_sem,
                                  self.theta_g, self.theta_grad, self.theta_px)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in d.items():
            if key not in known:
                raise ParseError(f"unknown config key: {key}")
            default = getattr(cls, key)
            if isinstance(default, bool):
                if isinstance(value, str):
                    value = value.strip().lower() in ("1", "true", "yes", "on")
                kwargs[key] = bool(value)
            elif isinstance(default, int):
                kwargs[key] = int(value)
            elif isinstance(default, float):
                kwargs[key] = float(value)
            else:
                kwargs[key] = str(value)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise ParseError(f"cannot read config {path}: {e}") from e
        text_stripped = text.lstrip()
        if text_stripped.startswith("{"):
            try:
                return cls.from_dict(json.loads(text))
            except ValueError as e:
                raise ParseError(f"bad JSON config: {e}") from e
        d = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"config line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            d[key] = value
        return cls.from_dict(d)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    """Adam moments per parameter group, tracking scene size."""

    m: dict
    v: dict
    step: int = 0
    skipped: int = 0

    @staticmethod
    def for_scene(scene: GaussianScene) -> "OptimizerState":
        return OptimizerState(
            m={g: np.zeros_like(getattr(scene, g)) for g in PARAM_GROUPS},
            v={g: np.zeros_like(getattr(scene, g)) for g in PARAM_GROUPS})

    def remap(self, keep_indices: np.ndarray, n_added: int):
        """Carry moments of surviving Gaussians; new ones start at zero."""
        for acc in (self.m, self.v):
            for g in PARAM_GROUPS:
                old = acc[g]
                kept = old[keep_indices]
                pad = np.zeros((n_added,) + old.shape[1:])
                acc[g] = np.concatenate([kept, pad], axis=0)


def learning_rates(cfg: TrainConfig, scene_extent: float, iteration: int,
                   total: int, n_sh_coeffs: int) -> dict:
    """Per-group Adam learning rates at this iteration."""
    frac = iteration / max(total, 1)
    lr_mean = scene_extent * cfg.lr_means * (cfg.lr_means_final / cfg.lr_means) ** frac
    lr_sh = np.full((n_sh_coeffs, 1), cfg.lr_sh_rest)
    lr_sh[0, 0] = cfg.lr_sh_dc
    return {
        "means": lr_mean,
        "quats": cfg.lr_rotation,
        "log_scales": cfg.lr_scale,
        "opacity_logits": cfg.lr_opacity,
        "sh": lr_sh,
    }


def optimizer_step(state: OptimizerState, grads: ParamGrads, scene: GaussianScene,
                   lrs: dict):
    """One Adam update over all parameter groups; renormalizes quaternions."""
    if not grads.all_finite():
        raise NonFiniteGradient("non-finite gradients; update skipped")
    state.step += 1
    t = state.step
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for g in PARAM_GROUPS:
        grad = getattr(grads, g)
        state.m[g] = ADAM_BETA1 * state.m[g] + (1.0 - ADAM_BETA1) * grad
        state.v[g] = ADAM_BETA2 * state.v[g] + (1.0 - ADAM_BETA2) * grad ** 2
        update = lrs[g] * (state.m[g] / c1) / (np.sqrt(state.v[g] / c2) + ADAM_EPS)
        getattr(scene, g)[...] -= update
    scene.normalize_quats()
    scene.bump_version()


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def triangulate_matches(dataset: Dataset, matchsets: list
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Midpoints of the closest approach of matched pixel rays.

    Returns (points, colors), both (M, 3); the color of each point is the
    first image's bilinear sample at the match pixel. Near-parallel ray
    pairs are dropped; empty arrays mean no match pair triangulated
    reliably.
    """
    points, colors = [], []
    for ms in matchsets:
        vi, vj = dataset.views[ms.view_i], dataset.views[ms.view_j]
        px_i, px_j = ms.matches[:, 0:2], ms.matches[:, 2:4]

        def rays(view, px):
            k = view.intrinsics
            d = np.stack([(px[:, 0] - k.cx) / k.fx,
                          (px[:, 1] - k.cy) / k.fy,
                          np.ones(len(px))], axis=1)
            d = d @ view.pose.rotation  # camera -> world direction
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            return view.pose.camera_center(), d

        oi, di = rays(vi, px_i)
        oj, dj = rays(vj, px_j)
        # closest points of two lines o + t*d
        dd = np.sum(di * dj, axis=1)
        denom = 1.0 - dd ** 2
        keep = denom > 1e-8
        w = oi - oj
        ti = (np.sum(dj * w, axis=1) * dd - np.sum(di * w, axis=1)) / denom
        tj = (np.sum(dj * w, axis=1) - np.sum(di * w, axis=1) * dd) / denom
        keep &= (ti > 0) & (tj > 0)
        mid = 0.5 * ((oi + ti[:, None] * di) + (oj + tj[:, None] * dj))
        points.append(mid[keep])
        colors.append(bilinear_sample(dataset.images[ms.view_i], px_i[keep]))
    if not points:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return np.concatenate(points, axis=0), np.concatenate(colors, axis=0)


def random_init_scene(dataset: Dataset, cfg: TrainConfig,
                      rng: np.random.Generator,
                      matchsets: list | None = None) -> GaussianScene:
    """Random Gaussians seeded from matches when available.

    With at least 8 triangulated match points, means are drawn from those
    points with a small jitter (2% of the point-cloud diagonal) and colors
    from the matched image pixels. Without matches the fallback is uniform
    means inside the union bounding box of the view frustums with random
    colors; frustum corners are taken at the near plane and at a depth
    covering the camera spread plus twice the scene extent. Either way,
    scales start at the mean nearest-neighbor distance and opacity at
    `init_opacity`.
    """
    n = cfg.n_init
    tri, tri_colors = triangulate_matches(dataset, matchsets) \
        if matchsets else (np.zeros((0, 3)), np.zeros((0, 3)))
    if len(tri) >= 8:
        diag = float(np.linalg.norm(tri.max(axis=0) - tri.min(axis=0)))
        pick = rng.integers(0, len(tri), size=n)
        means = tri[pick] + rng.normal(scale=0.02 * diag + 1e-6, size=(n, 3))
        colors = np.clip(tri_colors[pick], 0.0, 1.0)
    else:
        centers = np.array([v.pose.camera_center() for v in dataset.views])
        spread = 0.0
        if len(centers) > 1:
            spread = max(np.linalg.norm(a - b) for a in centers for b in centers)
        far = max(spread + 2.0 * dataset.scene_extent, 1.0)
        corners = []
        for view in dataset.views:
            k = view.intrinsics
            for u, vv in ((0, 0), (k.width - 1, 0), (0, k.height - 1),
                          (k.width - 1, k.height - 1)):
                ray = np.array([(u - k.cx) / k.fx, (vv - k.cy) / k.fy, 1.0])
                for depth in (view.near, far):
                    cam = ray * depth
                    corners.append(
                        (cam - view.pose.translation) @ view.pose.rotation)
        corners = np.array(corners)
        lo, hi = corners.min(axis=0), corners.max(axis=0)
        means = rng.uniform(lo, hi, size=(n, 3))
        colors = rng.uniform(0.0, 1.0, size=(n, 3))

    # mean nearest-neighbor distance on a subsample (init plumbing, not exact)
    probe = means[rng.choice(n, size=min(n, 512), replace=False)]
    d2 = np.sum((probe[:, None] - probe[None]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    nn = float(np.mean(np.sqrt(d2.min(axis=1))))
    sh = np.zeros((n, num_coeffs(cfg.sh_degree), 3))
    sh[:, 0, :] = (colors - 0.5) / C0
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    return GaussianScene(means, quats, np.full((n, 3), np.log(max(nn, 1e-4))),
                         np.full(n, inverse_sigmoid(cfg.init_opacity)), sh,
                         sh_degree=cfg.sh_degree, active_sh_degree=0)


# ---------------------------------------------------------------------------
# Trainer
# ---------------------------------------------------------------------------

class Trainer:
    """Owns the scene, optimizer, samplers, and per-view caches for one run."""

    def __init__(self, dataset: Dataset, matchsets: list, config: TrainConfig,
                 scene: GaussianScene | None = None, out_dir=None):
        self.dataset = dataset
        self.cfg = config
        self.schedule = config.schedule()
        self.out_dir = out_dir
        self.rng = np.random.default_rng(config.seed)
        self.scene = scene if scene is not None \
            else random_init_scene(dataset, config, self.rng,
                                   matchsets=matchsets)
        self.opt = OptimizerState.for_scene(self.scene)
        self.thresholds = DensifyThresholds(
            grad=config.densify_grad, prune_opacity=config.prune_opacity,
            scale=config.densify_scale, split_factor=config.densify_split_factor,
            interval=config.densify_interval)

        self.train_views = dataset.train_indices
        if len(self.train_views) < 2:
            raise ValueError("training needs at least 2 views")
        self._view_queue = []
        self._rr = 0  # round-robin cursor for the downscaled known-view term

        # constant per-view supervision caches
        self.matchsets = [m for m in matchsets
                          if m.view_i in self.train_views
                          and m.view_j in self.train_views]
        self.provider = FilterbankProvider() \
            if config.feature_provider == "filterbank" else None
        self.grad_mags = {i: sobel_gradient_magnitude(dataset.images[i])
                          for i in self.train_views}
        self.features = {}
        if self.provider is not None and config.gamma_sem > 0:
            for i in self.train_views:
                self.features[i] = self.provider.extract(dataset.images[i]).data

        self.log_lines = []
        self._log_fh = None
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)

    # -- sampling -----------------------------------------------------------

    def _next_train_view(self) -> int:
        if not self._view_queue:
            perm = self.rng.permutation(len(self.train_views))
            self._view_queue = [self.train_views[i] for i in perm]
        return self._view_queue.pop()

    def _next_rr_view(self) -> int:
        view = self.train_views[self._rr % len(self.train_views)]
        self._rr += 1
        return view

    # -- losses -------------------------------------------------------------

    def _known_view_loss(self, view_idx: int) -> tuple[float, ParamGrads, dict]:
        """Photometric + opacity + locality on one training view."""
        cfg = self.cfg
        view = self.dataset.views[view_idx]
        buf, state = render_forward(self.scene, view)
        photo, d_color = reg.photometric_loss(
            buf.color, self.dataset.images[view_idx], cfg.lambda_ssim)
        gbuf = GradBuffers.zeros(*buf.depth.shape)
        gbuf.d_color += cfg.lambda_photo * d_color
        grads = render_backward(self.scene, state, gbuf)

        loss = cfg.lambda_photo * photo
        parts = {"photo": photo}
        if cfg.chi_opacity > 0:
            op, d_logits = reg.opacity_loss(self.scene)
            grads.opacity_logits += cfg.chi_opacity * d_logits
            loss += cfg.chi_opacity * op
            parts["opacity"] = op
        if cfg.zeta_locality > 0:
            neighbors = knn_neighbors(self.scene, cfg.locality_k)
            loc, d_means, d_sh_dc = reg.locality_loss(
                self.scene, neighbors, delta=cfg.locality_delta,
                detach_means=cfg.locality_detach_means)
            grads.means += cfg.zeta_locality * d_means
            grads.sh[:, 0, :] += cfg.zeta_locality * d_sh_dc
            loss += cfg.zeta_locality * loc
            parts["locality"] = loc
        return loss, grads, parts

    def _novel_view_loss(self) -> tuple[float, ParamGrads | None, dict]:
        """Warped-match supervision at a pose sampled between a match pair."""
        cfg = self.cfg
        ms = self.matchsets[self.rng.integers(len(self.matchsets))]
        vi = self.dataset.views[ms.view_i]
        vj = self.dataset.views[ms.view_j]
        t = float(self.rng.uniform(cfg.novel_t_min, cfg.novel_t_max))
        pose_k = sample_intermediate_pose(vi.pose, vj.pose, t)
        view_k = CameraView(vi.intrinsics, pose_k, vi.near, vi.far)

        # detached, freshly rendered training-view depths at the match pixels
        buf_i, _ = render_forward(self.scene, vi, depth_alpha_normalize=True)
        buf_j, _ = render_forward(self.scene, vj, depth_alpha_normalize=True)
        zi = bilinear_sample(buf_i.depth, ms.pixels_i)
        zj = bilinear_sample(buf_j.depth, ms.pixels_j)
        ai = bilinear_sample(buf_i.alpha, ms.pixels_i)
        aj = bilinear_sample(buf_j.alpha, ms.pixels_j)
        backed = (ai > 0.5) & (aj > 0.5)
        stats = {"pair": (ms.view_i, ms.view_j), "t": t,
                 "n_matches": len(ms), "n_backed": int(backed.sum())}
        if not np.any(backed):
            return 0.0, None, stats

        sub = type(ms)(ms.view_i, ms.view_j, ms.matches[backed])
        weights = cfg.consistency_weights()
        warped, wstats = warp_matches(
            sub, zi[backed], zj[backed], vi, vj, view_k,
            image_i=self.dataset.images[ms.view_i],
            image_j=self.dataset.images[ms.view_j],
            features_i=self.features.get(ms.view_i),
            features_j=self.features.get(ms.view_j),
            grad_mag_i=self.grad_mags[ms.view_i],
            grad_mag_j=self.grad_mags[ms.view_j],
            weights=weights, scene_extent=self.dataset.scene_extent)
        stats["n_surviving"] = wstats.n_masked_in

        buf_k, state_k = render_forward(self.scene, view_k,
                                        depth_alpha_normalize=True)
        novel_feats = None
        if self.provider is not None and cfg.gamma_sem > 0:
            novel_feats = self.provider.extract(buf_k.color).data
        loss, gbuf, feat_grad = consistency_loss(warped, buf_k, novel_feats, weights)
        if novel_feats is not None:
            gbuf.d_color += self.provider.vjp(buf_k.color, feat_grad)
        grads = render_backward(self.scene, state_k, gbuf)
        return loss, grads, stats

    def stage_loss(self, stage: str) -> tuple[float, ParamGrads, dict]:
        """Assemble the loss and gradients for one iteration of `stage`."""
        cfg = self.cfg
        if stage in ("pretrain", "tune"):
            return self._known_view_loss(self._next_train_view())
        if stage not in ("intermediate", "single"):
            raise ValueError(f"unknown stage {stage!r}")

        total = 0.0
        grads = ParamGrads.zeros_like(self.scene)
        parts: dict = {}
        known_weight = cfg.eta_pretrain if stage == "intermediate" else 1.0
        if self.matchsets:
            try:
                closs, cgrads, cstats = self._novel_view_loss()
                if cgrads is not None:
                    total += cfg.kappa_consistency * closs
                    grads.add_scaled(cgrads, cfg.kappa_consistency)
                    parts["consistency"] = closs
                parts.update({k: v for k, v in cstats.items()
                              if k in ("n_backed", "n_surviving")})
            except NoSurvivingMatches:
                parts["consistency_skipped"] = 1
        view_idx = self._next_rr_view() if stage == "intermediate" \
            else self._next_train_view()
        kloss, kgrads, kparts = self._known_view_loss(view_idx)
        total += known_weight * kloss
        grads.add_scaled(kgrads, known_weight)
        parts.update(kparts)
        return total, grads, parts

    # -- loop ---------------------------------------------------------------

    def _log(self, record: dict):
        line = json.dumps(record, sort_keys=True)
        self.log_lines.append(line)
        if self._log_fh is not None:
            self._log_fh.write(line + "\n")

    def _checkpoint(self, name: str):
        if self.out_dir is not None:
            from .scene import save_ply
            save_ply(self.scene, os.path.join(self.out_dir, name))

    def run(self) -> GaussianScene:
        cfg = self.cfg
        sched = self.schedule
        total = sched.total
        densify_stop = max(sched.iters_pretrain + sched.iters_intermediate
                           - cfg.densify_stop_margin, 0)
        if self.out_dir is not None:
            self._log_fh = open(os.path.join(self.out_dir, "train_log.jsonl"),
                                "w", encoding="utf-8")
        try:
            prev_stage = None
            for it in range(total):
                stage = "single" if cfg.single_stage else sched.stage_of(it)
                if stage != prev_stage:
                    self._log({"event": "stage_start", "iter": it, "stage": stage,
                               "n_gaussians": len(self.scene)})
                    prev_stage = stage
                self.scene.active_sh_degree = min(
                    self.scene.sh_degree, it // max(cfg.sh_degree_interval, 1))

                loss, grads, parts = self.stage_loss(stage)
                if not math.isfinite(loss) or not grads.all_finite():
                    self.opt.skipped += 1
                    self._log({"event": "skipped_nonfinite", "iter": it})
                    continue
                self.scene.accumulate_pos_grads(grads.pos2d_norms(), grads.seen)
                lrs = learning_rates(cfg, self.dataset.scene_extent, it, total,
                                     self.scene.sh.shape[1])
                optimizer_step(self.opt, grads, self.scene, lrs)

                if (cfg.densify_interval > 0
                        and cfg.densify_start <= it < densify_stop
                        and (it + 1) % cfg.densify_interval == 0
                        and len(self.scene) < cfg.max_gaussians):
                    report = adaptive_density_control(
                        self.scene, self.thresholds, self.dataset.scene_extent,
                        self.rng, max_new=cfg.max_gaussians - len(self.scene))
                    self.opt.remap(report.keep_indices, report.n_added)
                    self._log({"event": "densify", "iter": it,
                               "n_gaussians": len(self.scene),
                               "pruned": report.n_pruned, "cloned": report.n_cloned,
                               "split": report.n_split})

                if it % cfg.log_interval == 0 or it == total - 1:
                    record = {"iter": it, "stage": stage, "loss": loss,
                              "n_gaussians": len(self.scene)}
                    record.update({f"loss_{k}": v for k, v in parts.items()
                                   if isinstance(v, float)})
                    self._log(record)
                if (cfg.checkpoint_interval > 0
                        and (it + 1) % cfg.checkpoint_interval == 0):
                    self._checkpoint(f"checkpoint_{it + 1:06d}.ply")
            self._log({"event": "done", "iter": total,
                       "n_gaussians": len(self.scene),
                       "skipped_nonfinite": self.opt.skipped})
            self._checkpoint("scene.ply")
        finally:
            if self._log_fh is not None:
                self._log_fh.close()
                self._log_fh = None
        return self.scene


def run_training(dataset: Dataset, matchsets: list, config: TrainConfig,
                 scene: GaussianScene | None = None, out_dir=None
                 ) -> tuple[GaussianScene, list]:
    """Train a scene on a dataset; returns (scene, run-log lines)."""
    trainer = Trainer(dataset, matchsets, config, scene=scene, out_dir=out_dir)
    trained = trainer.run()
    return trained, trainer.log_lines

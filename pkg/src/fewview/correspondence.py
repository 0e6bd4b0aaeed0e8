"""Pixel correspondences between training views.

Two sources: a JSON match file produced by an external matcher, and a
self-contained classical matcher (Harris corners + zero-normalized patch
cross-correlation with mutual-best filtering and sub-pixel refinement).
The classical matcher is adequate for synthetic scenes; real scenes are
expected to use ingested matches from a stronger external matcher.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import imageops as ops
from .errors import EmptyAfterFiltering, ParseError, TooFewKeypoints, UnknownViewIndex

DEFAULT_MIN_CONFIDENCE = 0.5


@dataclass
class MatchSet:
    """Correspondences between training views i and j.

    `matches` has shape (M, 5): (u_i, v_i, u_j, v_j, confidence), coordinates
    in pixels with the library's top-left / integer-center convention.
    """

    view_i: int
    view_j: int
    matches: np.ndarray

    def __post_init__(self):
        self.matches = np.asarray(self.matches, dtype=np.float64).reshape(-1, 5)
        if self.view_i == self.view_j:
            raise ValueError("a match set must connect two distinct views")
        if not np.all(np.isfinite(self.matches)):
            raise ValueError("matches contain non-finite values")

    def __len__(self) -> int:
        return self.matches.shape[0]

    @property
    def pixels_i(self) -> np.ndarray:
        return self.matches[:, 0:2]

    @property
    def pixels_j(self) -> np.ndarray:
        return self.matches[:, 2:4]

    @property
    def confidence(self) -> np.ndarray:
        return self.matches[:, 4]


@dataclass
class IngestStats:
    dropped_confidence: int = 0
    dropped_bounds: int = 0


def _in_bounds(uv: np.ndarray, width: int, height: int) -> np.ndarray:
    return ((uv[:, 0] >= 0) & (uv[:, 0] <= width - 1)
            & (uv[:, 1] >= 0) & (uv[:, 1] <= height - 1))


def ingest_matches(path, view_sizes: list[tuple[int, int]], *,
                   min_confidence: float = DEFAULT_MIN_CONFIDENCE,
                   strict: bool = False) -> tuple[list[MatchSet], IngestStats]:
    """Load and validate a JSON match file.

    `view_sizes` maps view index -> (width, height). Low-confidence matches
    are dropped; out-of-bounds matches are dropped (or raise under strict).
    Raises EmptyAfterFiltering if nothing survives.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        pairs = doc["pairs"]
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ParseError(f"cannot parse match file {path}: {e}") from e

    stats = IngestStats()
    out = []
    for pair in pairs:
        try:
            i, j = int(pair["i"]), int(pair["j"])
            arr = np.asarray(pair["matches"], dtype=np.float64).reshape(-1, 5)
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"malformed pair entry: {e}") from e
        if not (0 <= i < len(view_sizes)) or not (0 <= j < len(view_sizes)):
            raise UnknownViewIndex(f"pair ({i}, {j}) outside 0..{len(view_sizes) - 1}")
        if not np.all(np.isfinite(arr)):
            raise ParseError(f"pair ({i}, {j}) has non-finite entries")

        conf_ok = arr[:, 4] >= min_confidence
        stats.dropped_confidence += int(np.count_nonzero(~conf_ok))
        arr = arr[conf_ok]

        wi, hi = view_sizes[i]
        wj, hj = view_sizes[j]
        bounds_ok = _in_bounds(arr[:, 0:2], wi, hi) & _in_bounds(arr[:, 2:4], wj, hj)
        n_bad = int(np.count_nonzero(~bounds_ok))
        if n_bad and strict:
            raise ParseError(f"pair ({i}, {j}) has {n_bad} out-of-bounds matches")
        stats.dropped_bounds += n_bad
        arr = arr[bounds_ok]
        if len(arr):
            out.append(MatchSet(i, j, arr))
    if not out:
        raise EmptyAfterFiltering("no matches survived confidence/bounds filtering")
    return out, stats


# ---------------------------------------------------------------------------
# Built-in classical matcher
# ---------------------------------------------------------------------------

@dataclass
class MatcherParams:
    patch_size: int = 11          # odd
    max_keypoints: int = 300
    harris_k: float = 0.04
    harris_sigma: float = 1.0
    min_response_rel: float = 0.01  # fraction of the max corner response
    nms_radius: int = 3
    min_ncc: float = 0.5
    min_matches: int = 8


def _harris_corners(gray: np.ndarray, p: MatcherParams) -> np.ndarray:
    gx, gy = ops.sobel_xy(gray)
    ixx = ops.gaussian_blur(gx * gx, p.harris_sigma)
    iyy = ops.gaussian_blur(gy * gy, p.harris_sigma)
    ixy = ops.gaussian_blur(gx * gy, p.harris_sigma)
    resp = ixx * iyy - ixy ** 2 - p.harris_k * (ixx + iyy) ** 2
    rmax = resp.max()
    if rmax <= 1e-12:
        return np.zeros((0, 2), dtype=np.int64)
    thresh = p.min_response_rel * rmax

    h, w = gray.shape
    r = p.nms_radius
    margin = p.patch_size // 2 + 1
    cand = np.argwhere(resp > thresh)
    cand = cand[(cand[:, 0] >= margin) & (cand[:, 0] < h - margin)
                & (cand[:, 1] >= margin) & (cand[:, 1] < w - margin)]
    order = np.argsort(resp[cand[:, 0], cand[:, 1]], kind="stable")[::-1]
    cand = cand[order]
    taken = np.zeros((h, w), dtype=bool)
    out = []
    for y, x in cand:
        if taken[max(0, y - r):y + r + 1, max(0, x - r):x + r + 1].any():
            continue
        taken[y, x] = True
        out.append((y, x))
        if len(out) >= p.max_keypoints:
            break
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def _patches(gray: np.ndarray, kps: np.ndarray, size: int) -> np.ndarray:
    """Zero-normalized patch descriptors (N, size*size)."""
    r = size // 2
    out = np.empty((len(kps), size * size))
    for n, (y, x) in enumerate(kps):
        patch = gray[y - r:y + r + 1, x - r:x + r + 1].ravel()
        patch = patch - patch.mean()
        norm = np.linalg.norm(patch)
        out[n] = patch / norm if norm > 1e-12 else patch
    return out


def _subpixel_offset(corr: np.ndarray) -> tuple[float, float]:
    """Quadratic-fit peak offset from a 3x3 correlation neighborhood."""
    def fit(cm, c0, cp):
        denom = cm - 2 * c0 + cp
        if abs(denom) < 1e-12:
            return 0.0
        off = 0.5 * (cm - cp) / denom
        return float(np.clip(off, -0.5, 0.5))

    return fit(corr[1, 0], corr[1, 1], corr[1, 2]), fit(corr[0, 1], corr[1, 1], corr[2, 1])


def builtin_match(image_a: np.ndarray, image_b: np.ndarray,
                  params: MatcherParams | None = None,
                  view_i: int = 0, view_j: int = 1) -> MatchSet:
    """Harris keypoints matched by ZNCC with cross-check and sub-pixel peaks."""
    p = params or MatcherParams()
    ga = ops.luminance(np.asarray(image_a, dtype=np.float64)) \
        if image_a.ndim == 3 else np.asarray(image_a, dtype=np.float64)
    gb = ops.luminance(np.asarray(image_b, dtype=np.float64)) \
        if image_b.ndim == 3 else np.asarray(image_b, dtype=np.float64)

    kps_a = _harris_corners(ga, p)
    kps_b = _harris_corners(gb, p)
    if len(kps_a) < p.min_matches or len(kps_b) < p.min_matches:
        raise TooFewKeypoints(
            f"found {len(kps_a)}/{len(kps_b)} keypoints, need >= {p.min_matches}")

    da = _patches(ga, kps_a, p.patch_size)
    db = _patches(gb, kps_b, p.patch_size)
    ncc = da @ db.T
    best_ab = np.argmax(ncc, axis=1)
    best_ba = np.argmax(ncc, axis=0)

    r = p.patch_size // 2
    rows = []
    for ia, ib in enumerate(best_ab):
        if best_ba[ib] != ia:
            continue
        score = ncc[ia, ib]
        if score < p.min_ncc:
            continue
        ya, xa = kps_a[ia]
        yb, xb = kps_b[ib]
        # refine b's location on the local ZNCC surface around the peak
        corr = np.full((3, 3), -1.0)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                y, x = yb + dy, xb + dx
                if r <= y < gb.shape[0] - r and r <= x < gb.shape[1] - r:
                    patch = gb[y - r:y + r + 1, x - r:x + r + 1].ravel()
                    patch = patch - patch.mean()
                    nrm = np.linalg.norm(patch)
                    if nrm > 1e-12:
                        corr[dy + 1, dx + 1] = float(da[ia] @ (patch / nrm))
        off_x, off_y = _subpixel_offset(corr)
        conf = float(np.clip(0.5 * (score + 1.0), 0.0, 1.0))
        rows.append((xa, ya, xb + off_x, yb + off_y, conf))

    if len(rows) < p.min_matches:
        raise TooFewKeypoints(f"only {len(rows)} mutual matches, need >= {p.min_matches}")
    return MatchSet(view_i, view_j, np.array(rows))


def save_matches(path, matchsets: list[MatchSet]):
    doc = {"pairs": [{"i": m.view_i, "j": m.view_j,
                      "matches": [[float(x) for x in row] for row in m.matches]}
                     for m in matchsets]}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)

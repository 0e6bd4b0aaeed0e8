"""Differentiable semantic-feature providers and feature-map file ingestion.

The built-in provider is an analytic multi-scale filter bank: it stands in
for a pretrained low-level feature extractor while keeping an exact vjp.
Externally computed feature maps can be ingested from FVGF files for the
training views; the novel view always needs a differentiable provider.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import imageops as ops
from .errors import DimensionMismatch, ParseError

FVGF_MAGIC = b"FVGF"


@dataclass
class FeatureMap:
    """Image-sized feature stack, shape (H, W, C)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError("feature data must be (H, W, C)")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature data must be finite")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


class FilterbankProvider:
    """12-channel analytic features: RGB at 3 blur scales + 3 edge-energy maps.

    All operators are linear or have closed-form adjoints, so `vjp` is the
    exact adjoint of `extract`.
    """

    name = "filterbank"
    sigmas = (1.0, 2.0, 4.0)
    channels = 12
    _mag_eps = 1e-12

    def extract(self, image: np.ndarray) -> FeatureMap:
        image = np.asarray(image, dtype=np.float64)
        h, w = image.shape[:2]
        out = np.empty((h, w, self.channels))
        lum = ops.luminance(image)
        for s, sigma in enumerate(self.sigmas):
            out[:, :, 3 * s:3 * s + 3] = ops.gaussian_blur(image, sigma)
            gx, gy = ops.sobel_xy(ops.gaussian_blur(lum, sigma))
            out[:, :, 9 + s] = np.sqrt(gx * gx + gy * gy + self._mag_eps)
        return FeatureMap(out)

    def vjp(self, image: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != image.shape[:2] + (self.channels,):
            raise DimensionMismatch(
                f"upstream shape {upstream.shape} does not match image {image.shape}")
        grad = np.zeros_like(image)
        lum = ops.luminance(image)
        d_lum = np.zeros(image.shape[:2])
        for s, sigma in enumerate(self.sigmas):
            grad += ops.gaussian_blur_adjoint(upstream[:, :, 3 * s:3 * s + 3], sigma)
            blurred = ops.gaussian_blur(lum, sigma)
            gx, gy = ops.sobel_xy(blurred)
            mag = np.sqrt(gx * gx + gy * gy + self._mag_eps)
            u = upstream[:, :, 9 + s]
            d_blur = ops.sobel_xy_adjoint(u * gx / mag, u * gy / mag)
            d_lum += ops.gaussian_blur_adjoint(d_blur, sigma)
        grad += d_lum[:, :, None] * ops.LUMA_WEIGHTS[None, None, :]
        return grad


@dataclass
class IngestedProvider:
    """Marker provider for feature maps loaded from files (no vjp)."""

    name: str = "ingested"
    channels: int = 0


def write_feature_file(path, fmap: FeatureMap):
    with open(path, "wb") as f:
        f.write(FVGF_MAGIC)
        f.write(struct.pack("<III", fmap.height, fmap.width, fmap.channels))
        f.write(fmap.data.astype("<f4").tobytes())


def ingest_features(path, image_shape: tuple[int, int] | None = None) -> FeatureMap:
    """Read an FVGF feature file; optionally check against an image's (H, W)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != FVGF_MAGIC:
        raise ParseError(f"bad magic {blob[:4]!r}, expected {FVGF_MAGIC!r}")
    if len(blob) < 16:
        raise ParseError("truncated header")
    h, w, c = struct.unpack("<III", blob[4:16])
    expected = h * w * c * 4
    payload = blob[16:]
    if len(payload) < expected:
        raise ParseError(f"payload truncated: {len(payload)} < {expected} bytes")
    data = np.frombuffer(payload[:expected], dtype="<f4").astype(np.float64)
    data = data.reshape(h, w, c)
    if image_shape is not None and (h, w) != tuple(image_shape[:2]):
        raise DimensionMismatch(
            f"feature map is {h}x{w}, image is {image_shape[0]}x{image_shape[1]}")
    return FeatureMap(data)

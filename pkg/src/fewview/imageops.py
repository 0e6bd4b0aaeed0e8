"""Small linear image operators with exact adjoints, plus bilinear sampling.

Every filter here is built from replicate padding followed by 'valid'
separable correlation, so the adjoint is exact (needed for feature-provider
vjps and loss gradients).
"""

from __future__ import annotations

import numpy as np

SOBEL_SMOOTH = np.array([1.0, 2.0, 1.0])
SOBEL_DIFF = np.array([-1.0, 0.0, 1.0])
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def pad_replicate(x: np.ndarray, ry: int, rx: int) -> np.ndarray:
    pads = [(ry, ry), (rx, rx)] + [(0, 0)] * (x.ndim - 2)
    return np.pad(x, pads, mode="edge")


def pad_replicate_adjoint(g: np.ndarray, ry: int, rx: int) -> np.ndarray:
    """Fold padded-border gradients back onto the edge rows/columns."""
    out = g.copy()
    if ry:
        out[ry] += out[:ry].sum(axis=0)
        out[-ry - 1] += out[-ry:].sum(axis=0)
        out = out[ry:-ry]
    if rx:
        out[:, rx] += out[:, :rx].sum(axis=1)
        out[:, -rx - 1] += out[:, -rx:].sum(axis=1)
        out = out[:, rx:-rx]
    return out


def _correlate1d_valid(x: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    n = x.shape[axis] - k.size + 1
    out = np.zeros(x.shape[:axis] + (n,) + x.shape[axis + 1:])
    sl = [slice(None)] * x.ndim
    for t, kt in enumerate(k):
        sl[axis] = slice(t, t + n)
        out += kt * x[tuple(sl)]
    return out


def _correlate1d_valid_adjoint(u: np.ndarray, k: np.ndarray, axis: int,
                               padded_len: int) -> np.ndarray:
    shape = list(u.shape)
    shape[axis] = padded_len
    out = np.zeros(shape)
    n = u.shape[axis]
    sl = [slice(None)] * u.ndim
    for t, kt in enumerate(k):
        sl[axis] = slice(t, t + n)
        out[tuple(sl)] += kt * u
    return out


def sep_filter(x: np.ndarray, ky: np.ndarray, kx: np.ndarray) -> np.ndarray:
    """Replicate-padded separable correlation; output has the input's shape."""
    ry, rx = ky.size // 2, kx.size // 2
    xp = pad_replicate(x, ry, rx)
    return _correlate1d_valid(_correlate1d_valid(xp, ky, 0), kx, 1)


def sep_filter_adjoint(u: np.ndarray, ky: np.ndarray, kx: np.ndarray) -> np.ndarray:
    """Exact adjoint of `sep_filter` with the same kernels."""
    ry, rx = ky.size // 2, kx.size // 2
    h = u.shape[0] + 2 * ry
    w = u.shape[1] + 2 * rx
    g = _correlate1d_valid_adjoint(u, kx, 1, w)
    g = _correlate1d_valid_adjoint(g, ky, 0, h)
    return pad_replicate_adjoint(g, ry, rx)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    r = max(1, int(np.ceil(3.0 * sigma)))
    t = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(x: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel1d(sigma)
    return sep_filter(x, k, k)


def gaussian_blur_adjoint(u: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel1d(sigma)
    return sep_filter_adjoint(u, k, k)


def sobel_xy(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx = sep_filter(x, SOBEL_SMOOTH, SOBEL_DIFF)
    gy = sep_filter(x, SOBEL_DIFF, SOBEL_SMOOTH)
    return gx, gy


def sobel_xy_adjoint(ux: np.ndarray, uy: np.ndarray) -> np.ndarray:
    return (sep_filter_adjoint(ux, SOBEL_SMOOTH, SOBEL_DIFF)
            + sep_filter_adjoint(uy, SOBEL_DIFF, SOBEL_SMOOTH))


def luminance(image: np.ndarray) -> np.ndarray:
    return image @ LUMA_WEIGHTS


# ---------------------------------------------------------------------------
# Bilinear sampling
# ---------------------------------------------------------------------------

def _bilinear_coeffs(xy: np.ndarray, height: int, width: int):
    x = np.clip(xy[:, 0], 0.0, width - 1.0)
    y = np.clip(xy[:, 1], 0.0, height - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, width - 2) if width > 1 \
        else np.zeros(len(x), dtype=np.int64)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, height - 2) if height > 1 \
        else np.zeros(len(y), dtype=np.int64)
    fx = x - x0
    fy = y - y0
    w00 = (1 - fy) * (1 - fx)
    w01 = (1 - fy) * fx
    w10 = fy * (1 - fx)
    w11 = fy * fx
    return x0, y0, (w00, w01, w10, w11)


def bilinear_sample(img: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Sample an (H, W[, C]) image at float pixel coordinates (M, 2) = (x, y)."""
    h, w = img.shape[:2]
    x0, y0, (w00, w01, w10, w11) = _bilinear_coeffs(np.asarray(xy, dtype=np.float64), h, w)
    shape = (-1,) + (1,) * (img.ndim - 2)
    return (w00.reshape(shape) * img[y0, x0]
            + w01.reshape(shape) * img[y0, x0 + 1]
            + w10.reshape(shape) * img[y0 + 1, x0]
            + w11.reshape(shape) * img[y0 + 1, x0 + 1])


def bilinear_scatter(shape: tuple, xy: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Adjoint of `bilinear_sample`: scatter per-sample values into an image."""
    h, w = shape[:2]
    out = np.zeros(shape)
    x0, y0, (w00, w01, w10, w11) = _bilinear_coeffs(np.asarray(xy, dtype=np.float64), h, w)
    bshape = (-1,) + (1,) * (len(shape) - 2)
    v = np.asarray(values, dtype=np.float64)
    np.add.at(out, (y0, x0), w00.reshape(bshape) * v)
    np.add.at(out, (y0, x0 + 1), w01.reshape(bshape) * v)
    np.add.at(out, (y0 + 1, x0), w10.reshape(bshape) * v)
    np.add.at(out, (y0 + 1, x0 + 1), w11.reshape(bshape) * v)
    return out

import numpy as np
import pytest

from fewview import regularization as reg
from fewview.errors import ShapeMismatch, StaleNeighbors
from fewview.scene import GaussianScene, knn_neighbors
from fewview.sh import C0

from conftest import random_scene


def _ssim_oracle(x, y):
    """Direct windowed formula with an explicit 11x11 Gaussian window."""
    from scipy import ndimage
    r = 5
    t = np.arange(-r, r + 1)
    k1 = np.exp(-0.5 * (t / 1.5) ** 2)
    k1 /= k1.sum()
    win = np.outer(k1, k1)

    def filt(img):
        # valid-window correlation per channel
        out = np.stack([ndimage.correlate(img[:, :, c], win, mode="constant")
                        [r:-r, r:-r] for c in range(img.shape[2])], axis=2)
        return out

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx ** 2
    syy = filt(y * y) - my ** 2
    sxy = filt(x * y) - mx * my
    c1, c2 = 1e-4, 9e-4
    m = ((2 * mx * my + c1) * (2 * sxy + c2)
         / ((mx ** 2 + my ** 2 + c1) * (sxx + syy + c2)))
    return float(np.mean(m))


def test_ssim_self_is_one(rng):
    x = rng.random((24, 24, 3))
    assert np.isclose(reg.ssim(x, x), 1.0, atol=1e-12)


def test_ssim_matches_direct_formula(rng):
    x = rng.random((20, 22, 3))
    y = np.clip(x + 0.1 * rng.normal(size=x.shape), 0, 1)
    assert abs(reg.ssim(x, y) - _ssim_oracle(x, y)) <= 1e-6


def test_ssim_checkerboard_vs_inverse():
    base = np.indices((16, 16)).sum(axis=0) % 2
    x = np.repeat(base[:, :, None], 3, axis=2).astype(float)
    assert reg.ssim(x, 1.0 - x) < 0.5


def test_ssim_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        reg.ssim(np.zeros((8, 8, 3)), np.zeros((9, 8, 3)))


def test_ssim_gradient_fd(rng):
    x = rng.random((16, 16, 3))
    y = rng.random((16, 16, 3))
    s, ds = reg.ssim_with_grad(x, y)
    d = rng.normal(size=x.shape)
    h = 1e-6
    fd = (reg.ssim(x + h * d, y) - reg.ssim(x - h * d, y)) / (2 * h)
    an = float(np.sum(ds * d))
    assert abs(fd - an) / max(abs(fd), 1e-12) <= 1e-6


def test_photometric_zero_at_identity(rng):
    x = rng.random((16, 16, 3))
    loss, grad = reg.photometric_loss(x, x)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_photometric_gradient_fd(rng):
    x = rng.random((16, 16, 3))
    y = rng.random((16, 16, 3))
    loss, grad = reg.photometric_loss(x, y)
    d = rng.normal(size=x.shape)
    h = 1e-7
    fd = (reg.photometric_loss(x + h * d, y)[0]
          - reg.photometric_loss(x - h * d, y)[0]) / (2 * h)
    assert abs(fd - float(np.sum(grad * d))) / max(abs(fd), 1e-12) <= 1e-3


def test_opacity_loss_value_and_grad(rng):
    scene = random_scene(rng, n=6)
    loss, grad = reg.opacity_loss(scene)
    o = scene.opacities
    assert loss == pytest.approx(float(np.mean(o ** 2)), abs=1e-12)
    d = rng.normal(size=6)
    h = 1e-6
    sp = scene.copy()
    sp.opacity_logits[...] += h * d
    sm = scene.copy()
    sm.opacity_logits[...] -= h * d
    fd = (reg.opacity_loss(sp)[0] - reg.opacity_loss(sm)[0]) / (2 * h)
    assert abs(fd - float(np.sum(grad * d))) / max(abs(fd), 1e-12) <= 1e-6


def test_locality_pair_term_value():
    # two gaussians 1 apart, dc colors differing by 0.5 in one channel, K=1:
    # each ordered pair contributes exp(-delta*1)*0.5, normalized by N*K=2
    sh = np.zeros((2, 1, 3))
    sh[1, 0, 0] = 0.5 / C0
    scene = GaussianScene(np.array([[0.0, 0, 0], [1.0, 0, 0]]),
                          np.tile([1.0, 0, 0, 0], (2, 1)), np.zeros((2, 3)),
                          np.zeros(2), sh, 0)
    nb = np.array([[1], [0]])
    loss, _, _ = reg.locality_loss(scene, nb, delta=2.0)
    assert loss == pytest.approx(np.exp(-2.0) * 0.5, abs=1e-12)


def test_locality_zero_for_equal_colors(rng):
    scene = random_scene(rng, n=5)
    scene.sh[:, 0, :] = scene.sh[0, 0, :]
    nb = knn_neighbors(scene, 2)
    loss, d_means, d_sh = reg.locality_loss(scene, nb)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(d_means, 0)


def test_locality_gradient_fd(rng):
    scene = random_scene(rng, n=8)
    nb = knn_neighbors(scene, 3)
    loss, d_means, d_sh = reg.locality_loss(scene, nb)
    h = 1e-6
    for attr, grad, col in (("means", d_means, None), ("sh", d_sh, 0)):
        d = rng.normal(size=grad.shape)
        sp, sm = scene.copy(), scene.copy()
        if attr == "sh":
            sp.sh[:, 0, :] += h * d
            sm.sh[:, 0, :] -= h * d
        else:
            sp.means[...] += h * d
            sm.means[...] -= h * d
        fd = (reg.locality_loss(sp, nb)[0] - reg.locality_loss(sm, nb)[0]) / (2 * h)
        an = float(np.sum(grad * d))
        assert abs(fd - an) / max(abs(fd), 1e-12) <= 1e-4, attr


def test_locality_detach_means(rng):
    scene = random_scene(rng, n=6)
    nb = knn_neighbors(scene, 2)
    _, d_means, _ = reg.locality_loss(scene, nb, detach_means=True)
    assert np.all(d_means == 0)


def test_locality_stale_neighbors(rng):
    scene = random_scene(rng, n=6)
    with pytest.raises(StaleNeighbors):
        reg.locality_loss(scene, np.zeros((4, 2), dtype=int))

import numpy as np
import pytest

from fewview.errors import StateMismatch
from fewview.renderer import (GradBuffers, render_backward, render_forward,
                              render_forward_reference)

from conftest import frontal_view, random_scene

# settings that remove footprint/termination discontinuities for FD checks
SMOOTH = dict(max_sigma=1e9, term_threshold=0.0, alpha_skip=0.0)


def test_matches_reference_compositor(rng):
    for trial in range(10):
        scene = random_scene(rng, n=int(rng.integers(3, 20)))
        view = frontal_view(size=int(rng.integers(16, 48)))
        fast, _ = render_forward(scene, view, term_threshold=0.0)
        ref = render_forward_reference(scene, view)
        assert np.max(np.abs(fast.color - ref.color)) <= 1e-5
        assert np.max(np.abs(fast.alpha - ref.alpha)) <= 1e-5
        assert np.max(np.abs(fast.depth - ref.depth)) <= 1e-4


def test_alpha_bounded(rng):
    scene = random_scene(rng, n=15, opacity_range=(0.8, 0.99))
    buf, _ = render_forward(scene, frontal_view())
    assert np.all(buf.alpha >= 0)
    assert np.all(buf.alpha <= 1 + 1e-12)


def test_empty_scene_black_image(rng):
    scene = random_scene(rng, n=2)
    scene.means[:] = np.array([0.0, 0.0, -50.0])  # everything behind the camera
    buf, state = render_forward(scene, frontal_view())
    assert np.all(buf.color == 0)
    assert np.all(buf.alpha == 0)
    grads = render_backward(scene, state, GradBuffers.zeros(32, 32))
    assert np.all(grads.means == 0)


def test_single_opaque_gaussian_center_color(rng):
    scene = random_scene(rng, n=1, opacity_range=(0.999, 0.9999))
    scene.means[0] = np.zeros(3)
    scene.log_scales[0] = np.log([0.5, 0.5, 0.5])
    view = frontal_view(size=33)  # odd size: principal point on a pixel center
    buf, _ = render_forward(scene, view)
    from fewview.scene import dc_colors
    expect = dc_colors(scene)[0][0]
    center = buf.color[16, 16]
    assert np.allclose(center, expect * buf.alpha[16, 16], atol=1e-3)


def test_backward_matches_finite_differences(rng):
    view = frontal_view(size=24)
    for trial in range(3):
        scene = random_scene(rng, n=4, sh_degree=1)
        buf, state = render_forward(scene, view, **SMOOTH)
        up = GradBuffers(rng.normal(size=(24, 24, 3)), rng.normal(size=(24, 24)),
                         np.zeros((24, 24)))
        grads = render_backward(scene, state, up)

        def loss(s):
            b, _ = render_forward(s, view, **SMOOTH)
            return float(np.sum(b.color * up.d_color) + np.sum(b.depth * up.d_depth))

        h = 1e-5
        for group, g in (("means", grads.means), ("log_scales", grads.log_scales),
                         ("opacity_logits", grads.opacity_logits),
                         ("sh", grads.sh), ("quats", grads.quats)):
            d = rng.normal(size=g.shape)
            sp = scene.copy()
            getattr(sp, group)[...] += h * d
            sp.bump_version()
            sm = scene.copy()
            getattr(sm, group)[...] -= h * d
            sm.bump_version()
            fd = (loss(sp) - loss(sm)) / (2 * h)
            an = float(np.sum(g * d))
            ref = max(abs(fd), abs(an), 1e-8)
            assert abs(fd - an) / ref <= 1e-3, f"{group}: fd={fd} an={an}"


def test_backward_rejects_mutated_scene(rng):
    scene = random_scene(rng, n=4)
    view = frontal_view()
    _, state = render_forward(scene, view)
    scene.bump_version()
    with pytest.raises(StateMismatch):
        render_backward(scene, state, GradBuffers.zeros(32, 32))


def test_depth_alpha_normalize(rng):
    scene = random_scene(rng, n=1, opacity_range=(0.6, 0.6))
    scene.means[0] = np.zeros(3)
    view = frontal_view(size=33)
    raw, _ = render_forward(scene, view)
    norm, _ = render_forward(scene, view, depth_alpha_normalize=True)
    c = (16, 16)
    assert np.isclose(norm.depth[c], raw.depth[c] / raw.alpha[c])
    # normalized depth of a single gaussian equals its camera-space depth
    assert np.isclose(norm.depth[c], 4.0, atol=1e-6)


def test_deterministic_render(rng):
    scene = random_scene(rng, n=12)
    view = frontal_view()
    a, _ = render_forward(scene, view)
    b, _ = render_forward(scene, view)
    assert np.array_equal(a.color, b.color)
    assert np.array_equal(a.depth, b.depth)


def test_contrib_counts(rng):
    scene = random_scene(rng, n=10, opacity_range=(0.7, 0.95))
    buf, _ = render_forward(scene, frontal_view(), with_contrib=True)
    assert buf.contrib is not None
    assert np.all(buf.contrib >= 0)
    assert buf.contrib.max() <= 10

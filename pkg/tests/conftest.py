import numpy as np
import pytest

from fewview.geometry import CameraView, Intrinsics, Pose
from fewview.scene import GaussianScene, inverse_sigmoid
from fewview.sh import C0, num_coeffs


def random_scene(rng, n=5, sh_degree=0, spread=0.6, opacity_range=(0.3, 0.9)):
    """A compact Gaussian cloud centered at the origin."""
    nc = num_coeffs(sh_degree)
    sh = 0.3 * rng.normal(size=(n, nc, 3))
    sh[:, 0, :] = (rng.uniform(0.2, 0.8, size=(n, 3)) - 0.5) / C0
    return GaussianScene(
        means=rng.normal(scale=spread, size=(n, 3)),
        quats=rng.normal(size=(n, 4)),
        log_scales=np.log(rng.uniform(0.08, 0.25, size=(n, 3))),
        opacity_logits=inverse_sigmoid(rng.uniform(*opacity_range, size=n)),
        sh=sh, sh_degree=sh_degree)


def frontal_view(size=32, distance=4.0):
    intr = Intrinsics(1.2 * size, 1.2 * size, 0.5 * (size - 1), 0.5 * (size - 1),
                      size, size)
    return CameraView(intr, Pose(np.eye(3), np.array([0.0, 0.0, distance])))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance-criterion verdict lines after the run."""
    import sys

    lines = []
    for name, mod in sys.modules.items():
        if name.rsplit(".", 1)[-1] == "test_acceptance":
            lines = getattr(mod, "CRITERION_LINES", [])
            break
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

import numpy as np
import pytest

from fewview.errors import DimensionMismatch, ParseError
from fewview.features import (FeatureMap, FilterbankProvider, ingest_features,
                              write_feature_file)


def test_filterbank_channel_count(rng):
    img = rng.random((20, 24, 3))
    fmap = FilterbankProvider().extract(img)
    assert fmap.data.shape == (20, 24, 12)
    assert np.all(np.isfinite(fmap.data))


def test_filterbank_constant_image(rng):
    img = np.full((16, 16, 3), 0.6)
    fmap = FilterbankProvider().extract(img)
    # blurred channels keep the constant, edge channels are zero
    assert np.allclose(fmap.data[:, :, :9], 0.6, atol=1e-10)
    # edge channels reach only the sqrt of the magnitude-smoothing epsilon
    assert np.allclose(fmap.data[:, :, 9:], 0.0, atol=2e-6)


def test_filterbank_vjp_dot_product(rng):
    """Exact adjoint: JVP dotted with upstream equals grad dotted with probe."""
    provider = FilterbankProvider()
    img = rng.random((14, 14, 3))
    upstream = rng.normal(size=(14, 14, 12))
    grad = provider.vjp(img, upstream)
    probe = rng.normal(size=img.shape)
    h = 1e-6
    fp = provider.extract(img + h * probe).data
    fm = provider.extract(img - h * probe).data
    jvp_dot = float(np.sum((fp - fm) / (2 * h) * upstream))
    grad_dot = float(np.sum(grad * probe))
    assert abs(jvp_dot - grad_dot) / max(abs(jvp_dot), 1e-12) <= 1e-6


def test_feature_file_roundtrip(rng, tmp_path):
    fmap = FeatureMap(rng.random((9, 7, 5)).astype(np.float64))
    path = tmp_path / "f.fvgf"
    write_feature_file(path, fmap)
    back = ingest_features(path)
    assert back.data.shape == (9, 7, 5)
    assert np.allclose(back.data, fmap.data, atol=1e-6)  # f32 storage


def test_feature_file_bad_magic(tmp_path):
    path = tmp_path / "bad.fvgf"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ParseError):
        ingest_features(path)


def test_feature_file_shape_check(rng, tmp_path):
    fmap = FeatureMap(rng.random((8, 8, 3)))
    path = tmp_path / "f.fvgf"
    write_feature_file(path, fmap)
    with pytest.raises(DimensionMismatch):
        ingest_features(path, image_shape=(16, 16))

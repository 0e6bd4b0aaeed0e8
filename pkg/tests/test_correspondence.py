import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fewview.correspondence import (MatchSet, builtin_match,
                                    ingest_matches, save_matches)
from fewview.errors import (EmptyAfterFiltering, ParseError, TooFewKeypoints,
                            UnknownViewIndex)


def _write_matchfile(path, pairs):
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"pairs": pairs}, f)


def test_ingest_filters_low_confidence(tmp_path):
    path = tmp_path / "m.json"
    rows = [[1, 1, 2, 2, 0.9], [3, 3, 4, 4, 0.2]]
    _write_matchfile(path, [{"i": 0, "j": 1, "matches": rows}])
    sets, stats = ingest_matches(path, [(16, 16), (16, 16)])
    assert len(sets) == 1 and len(sets[0]) == 1
    assert stats.dropped_confidence == 1


def test_ingest_drops_out_of_bounds_lenient(tmp_path):
    path = tmp_path / "m.json"
    rows = [[1, 1, 2, 2, 0.9], [99, 1, 2, 2, 0.9]]
    _write_matchfile(path, [{"i": 0, "j": 1, "matches": rows}])
    sets, stats = ingest_matches(path, [(16, 16), (16, 16)])
    assert len(sets[0]) == 1
    assert stats.dropped_bounds == 1


def test_ingest_strict_bounds(tmp_path):
    path = tmp_path / "m.json"
    _write_matchfile(path, [{"i": 0, "j": 1, "matches": [[99, 1, 2, 2, 0.9]]}])
    with pytest.raises(ParseError):
        ingest_matches(path, [(16, 16), (16, 16)], strict=True)


def test_ingest_unknown_view(tmp_path):
    path = tmp_path / "m.json"
    _write_matchfile(path, [{"i": 0, "j": 7, "matches": [[1, 1, 2, 2, 0.9]]}])
    with pytest.raises(UnknownViewIndex):
        ingest_matches(path, [(16, 16), (16, 16)])


def test_ingest_empty_after_filtering(tmp_path):
    path = tmp_path / "m.json"
    _write_matchfile(path, [{"i": 0, "j": 1, "matches": [[1, 1, 2, 2, 0.1]]}])
    with pytest.raises(EmptyAfterFiltering):
        ingest_matches(path, [(16, 16), (16, 16)])


def test_ingest_malformed(tmp_path):
    path = tmp_path / "m.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        ingest_matches(path, [(16, 16)])


def test_save_load_roundtrip(tmp_path):
    ms = MatchSet(0, 1, np.array([[1.5, 2.5, 3.25, 4.0, 0.75]]))
    path = tmp_path / "m.json"
    save_matches(path, [ms])
    back, _ = ingest_matches(path, [(16, 16), (16, 16)])
    assert np.allclose(back[0].matches, ms.matches)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_ingested_matches_respect_bounds(seed):
    """Whatever survives ingestion lies inside both images (property)."""
    rng = np.random.default_rng(seed)
    rows = np.column_stack([
        rng.uniform(-5, 20, 10), rng.uniform(-5, 20, 10),
        rng.uniform(-5, 20, 10), rng.uniform(-5, 20, 10),
        rng.uniform(0, 1, 10)])
    import tempfile, os
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.json")
        _write_matchfile(path, [{"i": 0, "j": 1, "matches": rows.tolist()}])
        try:
            sets, _ = ingest_matches(path, [(16, 12), (16, 12)])
        except EmptyAfterFiltering:
            return
    for ms in sets:
        assert np.all(ms.pixels_i[:, 0] <= 15) and np.all(ms.pixels_i[:, 1] <= 11)
        assert np.all(ms.pixels_j >= 0)
        assert np.all(ms.confidence >= 0.5)


def _textured_plane(rng, h=64, w=64):
    img = rng.random((h // 8, w // 8, 3))
    return np.kron(img, np.ones((8, 8, 1)))[:h, :w] \
        + 0.05 * rng.random((h, w, 3))


def test_builtin_match_translation(rng):
    """Known integer shift: >= 90% of matches within 1 px of ground truth."""
    base = np.clip(_textured_plane(rng), 0, 1)
    dx, dy = 3, 2
    shifted = np.roll(np.roll(base, dy, axis=0), dx, axis=1)
    ms = builtin_match(base, shifted)
    disp = ms.pixels_j - ms.pixels_i
    err = np.linalg.norm(disp - np.array([dx, dy]), axis=1)
    assert len(ms) >= 8
    assert np.mean(err <= 1.0) >= 0.9, f"{np.mean(err <= 1.0)} of {len(ms)}"


def test_builtin_match_too_few_keypoints(rng):
    flat = np.full((32, 32, 3), 0.5)
    with pytest.raises(TooFewKeypoints):
        builtin_match(flat, flat)


def test_matchset_rejects_same_view():
    with pytest.raises(ValueError):
        MatchSet(2, 2, np.zeros((1, 5)))

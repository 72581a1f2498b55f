import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncd_erp import ncd
from ncd_erp.encode import AsciiObject
from ncd_erp.ncd import DistanceMatrix


@pytest.fixture(params=sorted(ncd.COMPRESSORS))
def compressor(request):
    return ncd.get_compressor(request.param)


def test_low_entropy_self_distance(rng):
    walk = np.cumsum(rng.normal(size=1024))
    x = bytes((65 + np.clip(((walk - walk.mean()) / walk.std() * 10).astype(int), -30, 30)).astype(np.uint8))
    assert ncd.ncd(x, x) < 0.15


def test_random_pair_near_one(rng):
    x = rng.integers(0, 256, 1024, dtype=np.uint8).tobytes()
    y = rng.integers(0, 256, 1024, dtype=np.uint8).tobytes()
    assert 0.9 <= ncd.ncd(x, y) <= 1.1


def test_random_pair_bz2(rng):
    # bzip2 spends a fixed ~100+ bytes per stream on headers and coding tables,
    # which pulls NCD of short incompressible inputs below 1
    x = rng.integers(0, 256, 1024, dtype=np.uint8).tobytes()
    y = rng.integers(0, 256, 1024, dtype=np.uint8).tobytes()
    assert 0.8 <= ncd.ncd(x, y, ncd.get_compressor("bz2")) <= 1.1


@settings(max_examples=40, deadline=None)
@given(x=st.binary(min_size=1, max_size=600), y=st.binary(min_size=1, max_size=600))
def test_exact_symmetry(x, y):
    assert ncd.ncd(x, y) == ncd.ncd(y, x)
    assert ncd.ncd(x, y) >= 0.0


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        ncd.ncd(b"", b"abc")


def test_unknown_compressor():
    with pytest.raises(ValueError, match="unknown compressor"):
        ncd.get_compressor("zip")


def test_zlib_size_is_headerless():
    import zlib

    data = b"abcabcabc" * 50
    assert ncd.ZlibCompressor().compressed_size(data) == len(zlib.compress(data, 9)) - 6


def _objects(rng, n=6):
    out = []
    for k in range(n):
        base = rng.integers(40, 44 + 3 * k, 400, dtype=np.uint8).tobytes()
        out.append(AsciiObject(base, "P300" if k % 2 else "NonP300", f"o{k}"))
    return out


def test_matrix_matches_pairwise(rng, compressor):
    objs = _objects(rng)
    m = ncd.distance_matrix(objs, compressor)
    for i, a in enumerate(objs):
        for j, b in enumerate(objs):
            assert m.values[i, j] == ncd.ncd(a.bytes, b.bytes, compressor) if i <= j else m.values[j, i]
    assert np.array_equal(m.values, m.values.T)
    assert m.ids == tuple(o.id for o in objs)


def test_matrix_independent_of_workers(rng):
    objs = _objects(rng, 9)
    assert ncd.distance_matrix(objs, workers=1) == ncd.distance_matrix(objs, workers=3)


def test_duplicate_ids_rejected():
    obj = AsciiObject(b"abc", "P300", "a")
    with pytest.raises(ValueError, match="duplicate"):
        ncd.distance_matrix([obj, obj])


def test_asymmetric_matrix_rejected():
    with pytest.raises(ValueError, match="symmetric"):
        DistanceMatrix(["a", "b"], ["P300", "P300"], [[0, 1], [0.5, 0]])


def test_range_check():
    v = np.full((3, 3), 1.15)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ncd.check_range(v)
    assert any("epsilon" in str(w.message) for w in caught)
    with pytest.raises(ValueError):
        ncd.check_range(np.full((3, 3), 1.25))


def test_hand_built_summary():
    labels = ["P300", "P300", "NonP300", "NonP300"]
    v = np.array(
        [
            [0.0, 0.90, 0.97, 0.99],
            [0.90, 0.0, 0.96, 0.98],
            [0.97, 0.96, 0.0, 0.92],
            [0.99, 0.98, 0.92, 0.0],
        ]
    )
    s = ncd.group_distance_summary(DistanceMatrix(["a", "b", "c", "d"], labels, v))
    assert s["intra_by_class"] == {"P300": 0.90, "NonP300": 0.92}
    assert s["intra"] == pytest.approx(0.91, abs=1e-15)
    assert s["inter"] == pytest.approx((0.97 + 0.99 + 0.96 + 0.98) / 4, abs=1e-15)
    assert s["diff"] == pytest.approx(0.975 - 0.91, abs=1e-15)


def test_equal_values_give_zero_difference():
    v = np.full((4, 4), 0.95)
    np.fill_diagonal(v, 0.0)
    s = ncd.group_distance_summary(DistanceMatrix(list("abcd"), ["P300", "NonP300"] * 2, v))
    assert s["diff"] == 0.0


def test_matrix_file_round_trip(tmp_path, rng):
    m = ncd.distance_matrix(_objects(rng))
    path = tmp_path / "m.csv"
    side = ncd.write_matrix(m, path)
    assert side.name == "m.labels.json"
    assert ncd.read_matrix(path) == m

import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from gramsr.patchmatch import (NNField, PatchMatchParams, brute_force_nnf, compute_nnf, load_nnf,
                               offset_visualization, patch_distance, save_nnf)


def test_patch_distance_examples(rng):
    a = rng.random((8, 8))
    assert patch_distance(a, 2, 3, a, 2, 3, 3) == 0.0
    assert patch_distance(np.ones((3, 3)), 0, 0, np.zeros((3, 3)), 0, 0, 3) == 9.0
    b = rng.random((9, 7))
    for _ in range(20):
        ay, ax, by, bx = rng.integers(0, 4, 4)
        assert patch_distance(a, ay, ax, b, by, bx, 3) == oracles.ssd(a, ay, ax, b, by, bx, 3)
    with pytest.raises(IndexError):
        patch_distance(a, 6, 0, b, 0, 0, 3)
    with pytest.raises(IndexError):
        patch_distance(a, 0, 0, b, 0, -1, 3)


def test_params_validation():
    for bad in ({"patch_size": 4}, {"patch_size": 1}, {"iterations": 0}, {"search_radius_decay": 1.0}):
        with pytest.raises(ValueError):
            PatchMatchParams(**bad)


def test_brute_force_self_match(rng):
    a = rng.random((9, 9))
    nnf = brute_force_nnf(a, a, 3)
    assert not nnf.distances.any()


def test_brute_force_translation(rng):
    base = rng.random((12, 16))
    src, tgt = base[:, :12], base[:, 2:14]  # tgt(y, x) = src(y, x + 2)
    nnf = brute_force_nnf(src, tgt, 3)
    # origins with x >= 2 have an exact copy two columns to the left in tgt
    inner = nnf.offsets[:, 2:]
    assert np.all(inner[..., 0] == 0) and np.all(inner[..., 1] == -2)
    assert not nnf.distances[:, 2:].any()


def test_brute_force_matches_exhaustive_loops(rng):
    src, tgt = rng.random((10, 10)), rng.random((10, 10))
    nnf = brute_force_nnf(src, tgt, 3)
    offs, dist = oracles.exhaustive_nnf(src, tgt, 3)
    np.testing.assert_array_equal(nnf.offsets, offs)
    np.testing.assert_array_equal(nnf.distances, dist)


def test_too_small():
    with pytest.raises(ValueError):
        brute_force_nnf(np.zeros((4, 4)), np.zeros((2, 9)), 3)
    with pytest.raises(ValueError):
        compute_nnf(np.zeros((2, 9)), np.zeros((4, 4)), PatchMatchParams(patch_size=3))


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_self_match_found(seed):
    a = np.random.default_rng(100 + seed).random((16, 16))
    nnf = compute_nnf(a, a, PatchMatchParams(patch_size=5, iterations=2, rng_seed=seed))
    assert not nnf.distances.any()


def _consistent(nnf, src, tgt):
    p = nnf.patch_size
    for y in range(nnf.height):
        for x in range(nnf.width):
            dy, dx = nnf.offsets[y, x]
            ty, tx = y + dy, x + dx
            assert 0 <= ty <= tgt.shape[0] - p and 0 <= tx <= tgt.shape[1] - p
            assert nnf.distances[y, x] == patch_distance(src, y, x, tgt, ty, tx, p)


@given(st.integers(0, 2**31), st.integers(7, 14), st.integers(7, 14), st.sampled_from([3, 5]))
@settings(max_examples=15, deadline=None)
def test_invariants(seed, h, w, p):
    rng = np.random.default_rng(seed)
    src, tgt = rng.random((h, w)), rng.random((w, h))
    hist = []
    nnf = compute_nnf(src, tgt, PatchMatchParams(patch_size=p, iterations=3, rng_seed=seed), history=hist)
    assert nnf.offsets.shape == (h - p + 1, w - p + 1, 2)
    _consistent(nnf, src, tgt)
    assert len(hist) == 4
    for before, after in zip(hist, hist[1:]):
        assert np.all(after <= before)
    exact = brute_force_nnf(src, tgt, p)
    assert nnf.distances.mean() >= exact.distances.mean()
    assert np.all(nnf.distances >= exact.distances)


def test_deterministic(rng):
    src, tgt = rng.random((14, 14)), rng.random((14, 14))
    params = PatchMatchParams(patch_size=5, rng_seed=11)
    a, b = compute_nnf(src, tgt, params), compute_nnf(src, tgt, params)
    np.testing.assert_array_equal(a.offsets, b.offsets)
    np.testing.assert_array_equal(a.distances, b.distances)
    c = compute_nnf(src, tgt, PatchMatchParams(patch_size=5, rng_seed=12))
    assert not np.array_equal(a.offsets, c.offsets)


def test_dump_round_trip_and_layout(tmp_path, rng):
    src, tgt = rng.random((12, 10)), rng.random((11, 13))
    nnf = compute_nnf(src, tgt, PatchMatchParams(patch_size=3, rng_seed=1))
    path = tmp_path / "f.nnf"
    save_nnf(nnf, path)
    buf = path.read_bytes()
    assert buf[:4] == b"NNF1"
    h, w, p = struct.unpack_from("<III", buf, 4)
    assert (h, w, p) == (10, 8, 3)
    assert len(buf) == 16 + 12 * h * w
    for i in range(h * w):
        dy, dx, d = struct.unpack_from("<iif", buf, 16 + 12 * i)
        y, x = divmod(i, w)
        assert (dy, dx) == tuple(nnf.offsets[y, x])
        assert d == np.float32(nnf.distances[y, x])
    back = load_nnf(path)
    np.testing.assert_array_equal(back.offsets, nnf.offsets)
    np.testing.assert_array_equal(back.distances, nnf.distances.astype(np.float32))


def test_load_rejects_bad_dump(tmp_path):
    p = tmp_path / "bad.nnf"
    p.write_bytes(b"NNF0" + bytes(12))
    with pytest.raises(ValueError):
        load_nnf(p)
    p.write_bytes(b"NNF1" + struct.pack("<III", 2, 2, 3) + bytes(12))
    with pytest.raises(ValueError):
        load_nnf(p)


def test_visualization_range():
    offs = np.array([[[0, 0], [3, -4]]])
    v = offset_visualization(NNField(offs, np.zeros((1, 2)), 3), (6, 7))
    assert v[0, 0] == 0.5
    assert 0 <= v.min() and v.max() <= 1

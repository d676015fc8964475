import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from refattn.errors import ShapeError
from refattn.matcher import (CorrespondenceMap, brute_force_match, match, pyramid_maps, rescale_map,
                             similarity_map)


def assert_same(a: CorrespondenceMap, b: CorrespondenceMap):
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.similarities, b.similarities)


def distinct_features(rng, c, h, w):
    return rng.uniform(0.1, 1.0, (c, h, w))


class TestMatch:
    def test_self_match_is_identity(self, rng):
        x = distinct_features(rng, 4, 6, 6)
        cmap = match(x, x, k=1)
        np.testing.assert_array_equal(cmap.top1(), np.arange(36))
        np.testing.assert_allclose(cmap.similarities[:, 0], 1.0, atol=1e-12)

    def test_invariant_to_positive_scaling(self, rng):
        q, k = rng.normal(size=(3, 5, 5)), rng.normal(size=(3, 6, 4))
        assert_same(match(q, k, 2), match(q * 8.0, k * 0.25, 2))

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_equals_brute_force(self, rng, k):
        q, kf = rng.normal(size=(3, 6, 6)), rng.normal(size=(3, 6, 6))
        assert_same(match(q, kf, k), brute_force_match(q, kf, k))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10 ** 6), st.integers(2, 8), st.integers(2, 8), st.integers(1, 3))
    def test_equals_brute_force_random_shapes(self, seed, h, w, k):
        rng = np.random.default_rng(seed)
        q, kf = rng.normal(size=(2, h, w)), rng.normal(size=(2, w, h))
        assert_same(match(q, kf, k), brute_force_match(q, kf, k))

    def test_k_equal_to_key_count_is_permutation(self, rng):
        q, kf = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 2, 3))
        cmap = match(q, kf, k=6)
        for row in cmap.positions:
            assert sorted(row) == list(range(6))
        assert np.all(np.diff(cmap.similarities, axis=1) <= 0)

    def test_single_key(self, rng):
        cmap = match(rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 1, 1)))
        np.testing.assert_array_equal(cmap.top1(), 0)

    @pytest.mark.parametrize("k", [0, 10])
    def test_k_out_of_range(self, rng, k):
        with pytest.raises(ValueError, match="k must be"):
            match(rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 3)), k=k)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            match(rng.normal(size=(2, 3, 3)), rng.normal(size=(3, 3, 3)))

    def test_orthogonal_channels_give_zero_similarity(self):
        q = np.zeros((2, 4, 4)); q[0] = 1.0
        kf = np.zeros((2, 4, 4)); kf[1] = 1.0
        cmap = match(q, kf, k=1)
        np.testing.assert_array_equal(similarity_map(cmap), 0.0)
        np.testing.assert_array_equal(cmap.top1(), 0)

    def test_top1_independent_of_k(self, rng):
        q, kf = rng.normal(size=(3, 5, 5)), rng.normal(size=(3, 5, 5))
        base = match(q, kf, 1)
        for k in (2, 3):
            np.testing.assert_array_equal(match(q, kf, k).positions[:, 0], base.positions[:, 0])

    def test_similarity_symmetric(self, rng):
        a, b = rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 4, 4))
        ab, ba = match(a, b, k=16), match(b, a, k=16)
        sim_ab = np.zeros((16, 16)); sim_ba = np.zeros((16, 16))
        for i in range(16):
            sim_ab[i, ab.positions[i]] = ab.similarities[i]
            sim_ba[i, ba.positions[i]] = ba.similarities[i]
        np.testing.assert_allclose(sim_ab, sim_ba.T, atol=1e-14)

    def test_constant_features_match_same_padding_pattern(self):
        q = np.ones((2, 3, 3))
        cmap = match(q, q, k=1)
        # every patch of a constant map is unique up to its zero-padded border
        np.testing.assert_array_equal(cmap.top1(), np.arange(9))

    def test_exact_ties_lowest_index(self):
        q = np.zeros((1, 1, 1)); q[0] = 1.0
        kf = np.ones((1, 1, 4))
        # with patch 1 every key has similarity exactly one
        cmap = match(q, kf, k=3, patch=1)
        np.testing.assert_array_equal(cmap.positions, [[0, 1, 2]])
        np.testing.assert_array_equal(cmap.similarities, [[1.0, 1.0, 1.0]])

    def test_thread_count_invariance(self, rng, monkeypatch):
        q, kf = rng.normal(size=(2, 24, 24)), rng.normal(size=(2, 16, 16))
        monkeypatch.setenv("REFATTN_THREADS", "1")
        one = match(q, kf, 2)
        monkeypatch.setenv("REFATTN_THREADS", "4")
        assert_same(one, match(q, kf, 2))

    def test_save_load(self, rng, tmp_path):
        cmap = match(rng.normal(size=(2, 4, 5)), rng.normal(size=(2, 3, 3)), 2)
        cmap.save(tmp_path / "m.ndar")
        back = CorrespondenceMap.load(tmp_path / "m.ndar")
        np.testing.assert_array_equal(back.positions, cmap.positions)
        np.testing.assert_allclose(back.similarities, cmap.similarities, rtol=1e-7)
        assert back.query_shape == (4, 5) and back.key_shape == (3, 3) and back.k == 2


class TestRescale:
    def test_factor_one_identity(self, rng):
        cmap = match(rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 3)))
        assert rescale_map(cmap, 1, (3, 3)) is cmap

    def test_displacement_preserved(self):
        cmap = CorrespondenceMap(1, 3, np.array([[3], [0], [1], [2]]), np.ones((4, 1)), (2, 2), (2, 2))
        fine = rescale_map(cmap, 2, (4, 4))
        ky, kx = fine.key_coords()
        for p in range(16):
            y, x = divmod(p, 4)
            py, px = divmod(int(cmap.positions[(y // 2) * 2 + x // 2, 0]), 2)
            assert (ky[p, 0], kx[p, 0]) == (py * 2 + y % 2, px * 2 + x % 2)

    def test_clips_to_key_grid(self):
        cmap = CorrespondenceMap(1, 3, np.array([[1]]), np.ones((1, 1)), (1, 1), (1, 2))
        fine = rescale_map(cmap, 2, (2, 3))
        assert fine.positions.max() < 6

    def test_pyramid_maps_shapes(self, rng):
        q = [rng.normal(size=(2, 8 // s, 8 // s)) for s in (1, 2, 4)]
        k = [rng.normal(size=(2, 12 // s, 8 // s)) for s in (1, 2, 4)]
        for per_scale in (False, True):
            maps = pyramid_maps(q, k, 2, 3, per_scale)
            assert [m.query_shape for m in maps] == [(8, 8), (4, 4), (2, 2)]
            assert [m.key_shape for m in maps] == [(12, 8), (6, 4), (3, 2)]
        assert_same(pyramid_maps(q, k, 2)[2], match(q[2], k[2], 2))


def test_map_invariants(rng):
    cmap = match(rng.normal(size=(3, 5, 4)), rng.normal(size=(3, 4, 4)), k=4)
    assert np.all(np.diff(cmap.similarities, axis=1) <= 0)
    assert cmap.similarities.min() >= -1 and cmap.similarities.max() <= 1
    assert all(len(set(row)) == 4 for row in cmap.positions)
    assert cmap.positions.min() >= 0 and cmap.positions.max() < 16

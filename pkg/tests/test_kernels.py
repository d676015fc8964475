import numpy as np
import pytest
from hypothesis import given, strategies as st

from refattn.errors import ShapeError
from refattn.numerics import (NdArray, bilinear_sample, col2im, conv2d, conv_transpose2d, im2col,
                              l2_normalize, softmax, sum_, unfold)


def loop_conv(x, w, b, stride, pad):
    """Direct cross-correlation with explicit loops over outputs, channels and taps."""
    c, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((co, ho, wo))
    for o in range(co):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0 if b is None else b[o]
                for ci in range(c):
                    for di in range(kh):
                        for dj in range(kw):
                            acc += w[o, ci, di, dj] * xp[ci, i * stride + di, j * stride + dj]
                out[o, i, j] = acc
    return out


def scalar_bilinear(src, y, x):
    c, h, w = src.shape
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    out = np.zeros(c)
    for yy, wy in ((y0, 1 - (y - y0)), (y0 + 1, y - y0)):
        for xx, wx in ((x0, 1 - (x - x0)), (x0 + 1, x - x0)):
            if 0 <= yy < h and 0 <= xx < w:
                out += wy * wx * src[:, yy, xx]
    return out


class TestConv2d:
    def test_pointwise_scaling(self):
        out = conv2d(np.ones((1, 3, 3)), np.full((1, 1, 1, 1), 2.0), np.zeros(1), 1, 0)
        np.testing.assert_array_equal(out.data, np.full((1, 3, 3), 2.0))

    def test_zero_padding_keeps_only_centre_tap(self):
        out = conv2d(np.full((1, 1, 1), 5.0), np.ones((1, 1, 3, 3)), np.zeros(1), 1, 1)
        np.testing.assert_array_equal(out.data, [[[5.0]]])

    @pytest.mark.parametrize("stride,pad", [(1, 1), (1, 0), (2, 1), (2, 0)])
    def test_matches_loop_oracle(self, rng, stride, pad):
        x, w, b = rng.uniform(-1, 1, (2, 5, 5)), rng.uniform(-1, 1, (3, 2, 3, 3)), rng.uniform(-1, 1, 3)
        np.testing.assert_allclose(conv2d(x, w, b, stride, pad).data, loop_conv(x, w, b, stride, pad),
                                   rtol=0, atol=1e-12)

    def test_channel_mismatch_message_has_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 5, 5\).*\(3, 4, 3, 3\)"):
            conv2d(np.ones((2, 5, 5)), np.ones((3, 4, 3, 3)))

    def test_even_kernel_rejected(self):
        with pytest.raises(ShapeError):
            conv2d(np.ones((1, 4, 4)), np.ones((1, 1, 2, 2)))

    @given(st.integers(1, 3), st.integers(3, 7), st.integers(3, 7), st.sampled_from([1, 2]))
    def test_transpose_is_adjoint(self, c, h, w, stride):
        rng = np.random.default_rng(c * 100 + h * 10 + w)
        x = rng.uniform(-1, 1, (c, h, w))
        wt = rng.uniform(-1, 1, (2, c, 3, 3))
        y = conv2d(x, wt, None, stride, 1).data
        g = rng.uniform(-1, 1, y.shape)
        back = conv_transpose2d(g, wt, stride, 1, (h, w)).data
        np.testing.assert_allclose(np.sum(y * g), np.sum(x * back), rtol=1e-12, atol=1e-12)


class TestIm2col:
    def test_col2im_is_adjoint(self, rng):
        x = rng.uniform(-1, 1, (2, 5, 6))
        cols = im2col(x, 3, 3, 2, 1)
        g = rng.uniform(-1, 1, cols.shape)
        np.testing.assert_allclose(np.sum(cols * g), np.sum(x * col2im(g, x.shape, 3, 3, 2, 1)), rtol=1e-12)


class TestUnfold:
    def test_unit_patch_is_reshape(self, rng):
        x = rng.uniform(size=(2, 3, 4))
        np.testing.assert_array_equal(unfold(x, 1).data, x.reshape(2, 12))

    def test_centre_column_lists_whole_image(self):
        x = np.arange(1.0, 10.0).reshape(1, 3, 3)
        np.testing.assert_array_equal(unfold(x, 3, 1).data[:, 4], np.arange(1.0, 10.0))

    def test_index_arithmetic_oracle(self, rng):
        c, h, w, k = 2, 4, 5, 3
        x = rng.uniform(size=(c, h, w))
        cols = unfold(x, k, 1).data
        for pos in range(h * w):
            i, j = divmod(pos, w)
            for ch in range(c):
                for di in range(k):
                    for dj in range(k):
                        yy, xx = i + di - 1, j + dj - 1
                        expect = x[ch, yy, xx] if 0 <= yy < h and 0 <= xx < w else 0.0
                        assert cols[ch * k * k + di * k + dj, pos] == expect

    def test_centre_row_recovers_input(self, rng):
        x = rng.uniform(size=(3, 4, 4))
        cols = unfold(x, 3, 1).data.reshape(3, 9, 16)
        np.testing.assert_array_equal(cols[:, 4].reshape(3, 4, 4), x)

    def test_even_patch_rejected(self):
        with pytest.raises(ShapeError):
            unfold(np.ones((1, 3, 3)), 2)


class TestBilinear:
    def test_integer_coordinates_gather(self, rng):
        src = rng.uniform(size=(2, 4, 5))
        ys, xs = rng.integers(0, 4, (3, 3)), rng.integers(0, 5, (3, 3))
        out = bilinear_sample(src, np.stack([ys, xs]).astype(float)).data
        np.testing.assert_array_equal(out, src[:, ys, xs])

    def test_cell_centre_is_mean(self):
        src = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        out = bilinear_sample(src, np.full((2, 1, 1), 0.5)).data
        assert out[0, 0, 0] == pytest.approx(2.5)

    def test_far_outside_is_zero(self):
        out = bilinear_sample(np.ones((1, 3, 3)), np.full((2, 2, 2), -5.0)).data
        np.testing.assert_array_equal(out, 0.0)

    def test_scalar_oracle(self, rng):
        src = rng.uniform(-1, 1, (2, 4, 5))
        coords = np.stack([rng.uniform(-1.5, 4.5, (3, 4)), rng.uniform(-1.5, 5.5, (3, 4))])
        out = bilinear_sample(src, coords).data
        for i in range(3):
            for j in range(4):
                np.testing.assert_allclose(out[:, i, j], scalar_bilinear(src, coords[0, i, j], coords[1, i, j]),
                                           rtol=0, atol=1e-14)


class TestElementwise:
    def test_softmax_symmetric(self):
        np.testing.assert_array_equal(softmax(np.zeros(2), axis=0).data, [0.5, 0.5])

    def test_softmax_rows(self, rng):
        out = softmax(rng.uniform(-30, 30, (50, 7)), axis=-1).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
        assert np.all(out >= 0) and np.all(out <= 1)

    def test_l2_normalize_345(self):
        np.testing.assert_allclose(l2_normalize(np.array([3.0, 4.0]), axis=0).data, [0.6, 0.8], rtol=1e-15)

    def test_l2_normalize_zero_vector_stays_zero(self):
        np.testing.assert_array_equal(l2_normalize(np.zeros((3, 2)), axis=0).data, 0.0)

    def test_sum_backward_through_scalar(self):
        x = NdArray(np.ones((2, 2)), requires_grad=True)
        sum_(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 2)))


def test_softmax_entries_strictly_inside_unit_interval(rng):
    out = softmax(rng.uniform(-5, 5, (20, 6)), axis=-1).data
    assert np.all(out > 0) and np.all(out < 1)

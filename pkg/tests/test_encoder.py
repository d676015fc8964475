from pathlib import Path

import numpy as np
import pytest

from refattn.encoder import (EncoderStack, ImagePlane, bicubic_upsample, build_pyramid, cubic_weight,
                             encode, resize_matrix, seeded_init)
from refattn.errors import ShapeError
from refattn.numerics import ndar

GOLDEN = Path(__file__).parent / "data" / "encoder_golden"


def catmull_rom(t):
    t = abs(t)
    if t <= 1:
        return 1.5 * t ** 3 - 2.5 * t ** 2 + 1
    if t < 2:
        return -0.5 * t ** 3 + 2.5 * t ** 2 - 4 * t + 2
    return 0.0


def upsample_oracle(img, f):
    """Pixel-by-pixel half-pixel-aligned bicubic with replicated borders."""
    c, h, w = img.shape
    out = np.zeros((c, h * f, w * f))
    for oy in range(h * f):
        cy = (oy + 0.5) / f - 0.5
        for ox in range(w * f):
            cx = (ox + 0.5) / f - 0.5
            acc = np.zeros(c)
            for ty in range(int(np.floor(cy)) - 2, int(np.floor(cy)) + 4):
                for tx in range(int(np.floor(cx)) - 2, int(np.floor(cx)) + 4):
                    wgt = catmull_rom(cy - ty) * catmull_rom(cx - tx)
                    acc += wgt * img[:, min(max(ty, 0), h - 1), min(max(tx, 0), w - 1)]
            out[:, oy, ox] = acc
    return out


class TestBicubic:
    def test_kernel_values(self):
        np.testing.assert_allclose(cubic_weight([0, 0.5, 1, 1.5, 2, 3]),
                                   [catmull_rom(t) for t in [0, 0.5, 1, 1.5, 2, 3]], atol=1e-15)

    def test_factor_one_is_identity(self, rng):
        img = ImagePlane(rng.uniform(size=(3, 4, 5)))
        np.testing.assert_array_equal(bicubic_upsample(img, 1).pixels, img.pixels)

    def test_constant_preserved(self):
        out = bicubic_upsample(ImagePlane(np.full((3, 4, 4), 0.3)), 4).pixels
        np.testing.assert_allclose(out, 0.3, atol=1e-15)

    def test_matrix_rows_sum_to_one(self):
        np.testing.assert_allclose(resize_matrix(7, 28).sum(axis=1), 1.0, atol=1e-14)

    def test_small_ramp_matches_oracle(self):
        img = np.stack([np.array([[0.0, 0.5], [0.25, 1.0]])] * 3) * np.array([1.0, 0.5, 0.2])[:, None, None]
        out = bicubic_upsample(ImagePlane(img), 4).pixels
        np.testing.assert_allclose(out, np.clip(upsample_oracle(img, 4), 0, 1), atol=1e-10)

    def test_random_image_matches_oracle(self, rng):
        img = rng.uniform(size=(3, 4, 3))
        out = bicubic_upsample(ImagePlane(img), 4).pixels
        np.testing.assert_allclose(out, np.clip(upsample_oracle(img, 4), 0, 1), atol=1e-10)

    def test_output_is_clamped(self):
        img = np.zeros((3, 4, 4))
        img[:, ::2, ::2] = 1.0
        out = bicubic_upsample(ImagePlane(img), 4).pixels
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_bad_factor(self):
        with pytest.raises(ValueError):
            bicubic_upsample(ImagePlane(np.zeros((3, 2, 2))), 0)

    def test_image_plane_validation(self):
        with pytest.raises(ShapeError):
            ImagePlane(np.zeros((1, 4, 4)))
        with pytest.raises(ValueError):
            ImagePlane(np.full((3, 2, 2), 1.5))


class TestEncode:
    widths = (4, 6, 8)

    def test_scale_shapes(self, rng):
        feats = encode(rng.uniform(size=(3, 16, 12)), seeded_init(0, self.widths), "value")
        assert [f.shape for f in feats] == [(4, 16, 12), (6, 8, 6), (8, 4, 3)]

    def test_query_and_key_share_weights(self, rng):
        stack = seeded_init(0, self.widths)
        img = rng.uniform(size=(3, 8, 8))
        for a, b in zip(encode(img, stack, "query"), encode(img, stack, "key")):
            np.testing.assert_array_equal(a.data, b.data)
        q, k = stack.weights("query"), stack.weights("key")
        assert all(q[n] is k[n] for n in q)
        q["s1.conv1.w"].data[0, 0, 1, 1] += 1.0
        assert k["s1.conv1.w"].data[0, 0, 1, 1] == q["s1.conv1.w"].data[0, 0, 1, 1]

    def test_value_encoder_is_separate(self, rng):
        stack = seeded_init(0, self.widths)
        img = rng.uniform(size=(3, 8, 8))
        assert not np.array_equal(encode(img, stack, "query")[0].data, encode(img, stack, "value")[0].data)

    def test_features_nonnegative(self, rng):
        feats = encode(rng.uniform(size=(3, 8, 8)), seeded_init(1, self.widths), "key")
        assert all(f.data.min() >= 0 for f in feats)

    def test_indivisible_dims_rejected(self):
        with pytest.raises(ShapeError, match="divisible by 4"):
            encode(np.zeros((3, 10, 8)), seeded_init(0, self.widths), "query")

    def test_unknown_role(self):
        with pytest.raises(ValueError):
            encode(np.zeros((3, 8, 8)), seeded_init(0, self.widths), "attention")

    def test_pyramid_roles(self, rng):
        stack = seeded_init(2, self.widths)
        lr_up, ref = rng.uniform(size=(3, 8, 8)), rng.uniform(size=(3, 12, 8))
        pyr = build_pyramid(lr_up, ref, stack)
        np.testing.assert_array_equal(pyr.q[2].data, encode(lr_up, stack, "query")[2].data)
        np.testing.assert_array_equal(pyr.v[0].data, encode(ref, stack, "value")[0].data)
        assert pyr.k[1].shape == (6, 6, 4)


class TestGolden:
    def test_matches_stored_features(self):
        stack = EncoderStack.load(GOLDEN / "weights")
        img = ndar.load(GOLDEN / "input.ndar")
        for role in ("query", "value"):
            for l, feat in enumerate(encode(img, stack, role), start=1):
                expect = ndar.load(GOLDEN / f"{role}_s{l}.ndar")
                np.testing.assert_allclose(feat.data, expect, rtol=1e-5, atol=1e-6)


class TestSeededInit:
    def test_deterministic(self):
        a, b = seeded_init(9, (4, 6, 8)), seeded_init(9, (4, 6, 8))
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_seed_sensitive(self):
        assert not np.array_equal(seeded_init(1, (4, 6, 8)).params["qk.s1.conv1.w"],
                                  seeded_init(2, (4, 6, 8)).params["qk.s1.conv1.w"])

    def test_he_variance(self):
        w = seeded_init(0, (64, 128, 256)).params["v.s3.conv2.w"]
        assert w.var() == pytest.approx(2.0 / (256 * 9), rel=0.05)
        np.testing.assert_array_equal(seeded_init(0, (4, 6, 8)).params["v.s2.conv1.b"], 0.0)

    def test_save_load(self, tmp_path):
        stack = seeded_init(4, (4, 6, 8))
        stack.save(tmp_path)
        back = EncoderStack.load(tmp_path)
        assert back.widths == stack.widths and back.seed == 4
        for name, v in stack.params.items():
            np.testing.assert_array_equal(back.params[name], v.astype(np.float32))

    def test_wrong_width_count(self):
        with pytest.raises(ValueError):
            seeded_init(0, (4, 8))

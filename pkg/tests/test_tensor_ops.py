import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hirescascade.errors import InvalidArgumentError
from hirescascade.tensor_ops import (
    FrequencyFilter,
    LatentTensor,
    PatchGrid,
    conv2d_dilated,
    downsample_area,
    extract_patches,
    gaussian_kernel,
    gaussian_lowpass,
    reconstruct_patches,
    softmax_scaled,
    upsample_bilinear,
)

finite = st.floats(-10, 10, allow_nan=False)


def direct_conv(x, kernel, d):
    """Literal zero-padded cross-correlation, one output cell at a time."""
    c_out, c_in, k, _ = kernel.shape
    h, w = x.shape[-2:]
    c = k // 2
    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for y in range(h):
            for x0 in range(w):
                acc = 0.0
                for ci in range(c_in):
                    for i in range(k):
                        for j in range(k):
                            yy, xx = y + d * (i - c), x0 + d * (j - c)
                            if 0 <= yy < h and 0 <= xx < w:
                                acc += kernel[o, ci, i, j] * x[ci, yy, xx]
                out[o, y, x0] = acc
    return out


class TestLatentTensor:
    def test_level_must_be_positive(self):
        with pytest.raises(InvalidArgumentError):
            LatentTensor(np.zeros((1, 2, 2)), level=0)

    def test_rank_checked(self):
        with pytest.raises(InvalidArgumentError):
            LatentTensor(np.zeros((2, 2)))


class TestUpsampleBilinear:
    def test_constant_preserved(self):
        out = upsample_bilinear(np.full((2, 3, 5), 3.0), 2)
        assert out.shape == (2, 6, 10)
        np.testing.assert_array_equal(out, 3.0)

    def test_scale_one_is_bitwise_identity(self, rs):
        x = rs.normal(size=(3, 4, 5))
        np.testing.assert_array_equal(upsample_bilinear(x, 1), x)

    def test_sample_center_row(self, goldens):
        out = upsample_bilinear(np.array([[[0.0, 1.0]]]), 2)
        assert out[0, 0].tolist() == goldens["bilinear_row"] == [0.0, 0.25, 0.75, 1.0]

    def test_level_multiplied_and_frames_untouched(self, rs):
        x = LatentTensor(rs.normal(size=(2, 3, 4, 4)), level=2)
        y = upsample_bilinear(x, 2)
        assert y.level == 4 and y.data.shape == (2, 3, 8, 8)

    @pytest.mark.parametrize("scale", [0, -1, 1.5])
    def test_bad_scale(self, scale):
        with pytest.raises(InvalidArgumentError):
            upsample_bilinear(np.zeros((1, 2, 2)), scale)

    @given(arrays(np.float64, (2, 3, 4), elements=finite))
    def test_output_stays_within_input_range(self, x):
        up = upsample_bilinear(x, 2)
        assert up.min() >= x.min() - 1e-12 and up.max() <= x.max() + 1e-12
        assert downsample_area(up, 2).shape == x.shape


class TestGaussianLowpass:
    def test_kernel_normalized_and_symmetric(self):
        for s in (0.3, 1.0, 2.5):
            k = gaussian_kernel(s)
            assert len(k) == 2 * math.ceil(3 * s) + 1
            assert abs(k.sum() - 1.0) < 1e-15
            np.testing.assert_array_equal(k, k[::-1])

    def test_kernel_matches_oracle(self, goldens):
        for s, ref in goldens["gaussian_kernel"].items():
            np.testing.assert_allclose(gaussian_kernel(float(s)), ref, rtol=0, atol=1e-15)

    def test_constant_unchanged(self):
        np.testing.assert_allclose(gaussian_lowpass(np.full((2, 9, 7), -1.25), 1.5), -1.25, rtol=0, atol=1e-14)

    def test_impulse_gives_outer_product(self, goldens):
        x = np.zeros((1, 15, 15))
        x[0, 7, 7] = 1.0
        k = np.array(goldens["gaussian_kernel"]["1.0"])
        ref = np.zeros((15, 15))
        ref[4:11, 4:11] = np.outer(k, k)
        np.testing.assert_allclose(gaussian_lowpass(x, FrequencyFilter(1.0))[0], ref, rtol=0, atol=1e-15)

    def test_linear(self, rs):
        a, b = rs.normal(size=(2, 3, 10, 12))
        np.testing.assert_allclose(
            gaussian_lowpass(a + b, 1.0), gaussian_lowpass(a, 1.0) + gaussian_lowpass(b, 1.0), rtol=0, atol=1e-12
        )

    @pytest.mark.parametrize("sigma", [0.5, 1.0, 1.7])
    def test_mean_preserved_with_constant_border(self, rs, sigma):
        # border band as wide as the kernel radius: reflection equals the band, no mass leaks
        r = FrequencyFilter(sigma).radius
        x = np.full((2, 30, 34), 0.7)
        x[:, 2 * r : -2 * r, 2 * r : -2 * r] += rs.normal(size=(2, 30 - 4 * r, 34 - 4 * r))
        out = gaussian_lowpass(x, sigma)
        np.testing.assert_allclose(out.mean(axis=(1, 2)), x.mean(axis=(1, 2)), rtol=0, atol=1e-10)

    def test_latent_tensor_level_kept(self, rs):
        y = gaussian_lowpass(LatentTensor(rs.normal(size=(1, 8, 8)), level=2), 1.0)
        assert isinstance(y, LatentTensor) and y.level == 2

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_bad_sigma(self, sigma):
        with pytest.raises(InvalidArgumentError):
            gaussian_lowpass(np.zeros((1, 4, 4)), sigma)


class TestConv2dDilated:
    def test_matches_direct_summation(self, rs):
        for _ in range(50):
            c_in, c_out = rs.integers(1, 3, size=2)
            h, w = rs.integers(1, 9, size=2)
            k = int(rs.choice([1, 3, 5]))
            x = rs.normal(size=(c_in, h, w))
            kern = rs.normal(size=(c_out, c_in, k, k))
            np.testing.assert_allclose(conv2d_dilated(x, kern, 1), direct_conv(x, kern, 1), rtol=0, atol=1e-12)

    @pytest.mark.parametrize("d", [1, 2, 3, 5])
    def test_delta_kernel_is_identity(self, rs, d):
        x = rs.normal(size=(2, 6, 7))
        kern = np.zeros((2, 2, 3, 3))
        kern[0, 0, 1, 1] = kern[1, 1, 1, 1] = 1.0
        np.testing.assert_array_equal(conv2d_dilated(x, kern, d), x)

    def test_ramp_dilation_two(self, goldens):
        x = np.arange(16.0).reshape(1, 4, 4)
        out = conv2d_dilated(x, np.ones((1, 1, 3, 3)), 2)
        np.testing.assert_allclose(out[0], goldens["dilated_conv_ramp_d2"], rtol=0, atol=1e-12)

    def test_dilated_matches_direct(self, rs):
        x = rs.normal(size=(2, 7, 6))
        kern = rs.normal(size=(3, 2, 3, 3))
        np.testing.assert_allclose(conv2d_dilated(x, kern, 2), direct_conv(x, kern, 2), rtol=0, atol=1e-12)

    def test_even_kernel_rejected(self):
        with pytest.raises(InvalidArgumentError):
            conv2d_dilated(np.zeros((1, 4, 4)), np.zeros((1, 1, 2, 2)), 1)

    def test_bad_dilation(self):
        with pytest.raises(InvalidArgumentError):
            conv2d_dilated(np.zeros((1, 4, 4)), np.zeros((1, 1, 3, 3)), 0)


class TestPatches:
    def test_four_patches(self):
        assert PatchGrid((2, 2), (2, 2)).count(4, 4) == 4

    def test_nine_patches(self, goldens):
        g = PatchGrid((2, 2), (1, 1))
        assert [list(o) for o in g.offsets(4, 4)] == goldens["patch_offsets_4x4_w2_s1"]
        assert g.count(4, 4) == 9

    def test_whole_window_single_patch(self, rs):
        x = rs.normal(size=(2, 5, 6))
        (p,) = extract_patches(x, PatchGrid((5, 6), (1, 1)))
        np.testing.assert_array_equal(p, x)

    def test_row_major_order(self):
        x = np.arange(16.0).reshape(1, 4, 4)
        ps = extract_patches(x, PatchGrid((2, 2), (2, 2)))
        assert [p[0, 0, 0] for p in ps] == [0.0, 2.0, 8.0, 10.0]

    def test_non_divisible_names_axis(self):
        with pytest.raises(InvalidArgumentError, match="width"):
            PatchGrid((2, 2), (2, 2)).offsets(4, 5)
        with pytest.raises(InvalidArgumentError, match="height"):
            PatchGrid((3, 2), (2, 2)).offsets(6, 4)

    @given(
        st.integers(1, 4).flatmap(
            lambda win: st.tuples(st.just(win), st.integers(1, 3)).map(lambda t: (t[0], t[0] * t[1]))
        )
    )
    def test_round_trip_when_stride_equals_window(self, geometry):
        win, size = geometry
        x = np.random.default_rng(size).normal(size=(2, size, size))
        g = PatchGrid((win, win), (win, win))
        np.testing.assert_array_equal(reconstruct_patches(extract_patches(x, g), g, x.shape), x)

    def test_overlapping_constant(self):
        g = PatchGrid((2, 2), (1, 1))
        out = reconstruct_patches([np.full((1, 2, 2), 5.0)] * 9, g, (1, 4, 4))
        np.testing.assert_array_equal(out, 5.0)

    def test_overlap_averaging_by_hand(self, goldens):
        g = PatchGrid((1, 2), (1, 1))
        out = reconstruct_patches([np.ones((1, 1, 2)), np.full((1, 1, 2), 3.0)], g, (1, 1, 3))
        assert out[0, 0].tolist() == goldens["overlap_mean"] == [1.0, 2.0, 3.0]

    def test_every_cell_covered(self):
        g = PatchGrid((4, 4), (2, 2))
        out = reconstruct_patches([np.ones((1, 4, 4))] * g.count(8, 8), g, (1, 8, 8))
        np.testing.assert_array_equal(out, 1.0)

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            reconstruct_patches([np.ones((1, 2, 2))], PatchGrid((2, 2), (2, 2)), (1, 4, 4))


class TestSoftmaxScaled:
    def test_symmetric(self):
        np.testing.assert_array_equal(softmax_scaled(np.array([0.0, 0.0])), [0.5, 0.5])

    def test_hot_limit(self, rs):
        p = softmax_scaled(rs.normal(size=6) * 5, temperature=1e6)
        np.testing.assert_allclose(p, 1 / 6, atol=1e-5)

    def test_closed_form(self, goldens):
        p = softmax_scaled(np.array([math.log(3.0), 0.0]))
        np.testing.assert_allclose(p, goldens["softmax_ln3"], rtol=0, atol=1e-15)
        np.testing.assert_allclose(p, [0.75, 0.25], rtol=0, atol=1e-15)

    @given(arrays(np.float64, (3, 5), elements=finite), finite, st.floats(0.1, 10), st.floats(0.5, 64))
    @settings(max_examples=60)
    def test_rows_sum_to_one_and_shift_invariant(self, scores, shift, t, d):
        p = softmax_scaled(scores, t, d)
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
        np.testing.assert_allclose(softmax_scaled(scores + shift, t, d), p, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("t", [0.0, -2.0])
    def test_bad_temperature(self, t):
        with pytest.raises(InvalidArgumentError):
            softmax_scaled(np.zeros(3), temperature=t)

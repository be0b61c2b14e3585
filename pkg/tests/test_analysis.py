import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hirescascade.analysis import (
    autocorrelation,
    frequency_bin,
    hf_energy_ratio,
    image_metrics,
    power_spectrum,
    repetition_score,
    spectrum_profile,
)
from hirescascade.errors import InvalidArgumentError
from hirescascade.tensor_ops import gaussian_lowpass


@pytest.fixture
def noise(rs):
    return rs.normal(size=(64, 64))


def checkerboard(n: int) -> np.ndarray:
    return np.where((np.arange(n)[:, None] + np.arange(n)[None, :]) % 2 == 0, 1.0, -1.0)


class TestSpectrumProfile:
    def test_constant_is_dc_only(self):
        prof = spectrum_profile(np.full((16, 20), 0.7))
        assert prof.bins[0] == pytest.approx(0.49, abs=1e-12)
        assert np.abs(prof.bins[1:]).max() <= 1e-10
        assert len(prof) == 32

    @pytest.mark.parametrize("k", [3, 8, 13, 20])
    def test_cosine_lands_in_its_bin(self, k):
        n = 64
        y = np.cos(2 * np.pi * k * np.arange(n) / n)
        img = np.broadcast_to(y[:, None], (n, n))
        prof = spectrum_profile(img)
        assert int(np.argmax(prof.bins)) == int(frequency_bin(k / n))

    def test_parseval(self, noise):
        p = power_spectrum(noise)
        assert abs(p.sum() - noise.size * np.sum(noise**2)) <= 1e-9 * p.sum()

    def test_nonnegative_and_multichannel(self, rs):
        img = rs.normal(size=(3, 16, 16))
        prof = spectrum_profile(img)
        assert np.all(prof.bins >= 0)
        np.testing.assert_array_equal(prof.bins, spectrum_profile(img.mean(axis=0)).bins)

    @pytest.mark.parametrize("bad", [np.zeros((0, 4)), np.zeros(5), np.zeros((2, 2, 2, 2))])
    def test_bad_input(self, bad):
        with pytest.raises(InvalidArgumentError):
            spectrum_profile(bad)

    def test_bad_bins(self):
        with pytest.raises(InvalidArgumentError):
            spectrum_profile(np.ones((4, 4)), bins=1)


class TestHfEnergyRatio:
    def test_constant(self):
        assert hf_energy_ratio(np.full((8, 8), 3.0)) == 0.0

    def test_blur_removes_high_band(self, noise):
        assert hf_energy_ratio(noise) > hf_energy_ratio(gaussian_lowpass(noise, 1.0))

    def test_checkerboard(self, goldens):
        r = hf_energy_ratio(checkerboard(64), 2.0)
        assert r >= 0.99
        assert r == pytest.approx(goldens["checkerboard_hf_sigma2"], abs=1e-9)

    def test_range(self, noise):
        assert 0.0 <= hf_energy_ratio(noise, 0.3) <= 1.0

    def test_sigma_validation(self, noise):
        with pytest.raises(InvalidArgumentError):
            hf_energy_ratio(noise, 0.0)


class TestRepetitionScore:
    def test_tiled(self, rs):
        tile = rs.normal(size=(16, 16))
        img = np.tile(tile, (2, 2))
        assert repetition_score(img, 8) >= 0.95
        assert autocorrelation(img)[16, 0] == pytest.approx(1.0, abs=1e-12)

    def test_constant(self):
        assert repetition_score(np.full((32, 32), 2.0), 8) == 0.0

    def test_noise(self, noise):
        assert repetition_score(noise, 8) <= 0.2

    def test_too_small(self):
        with pytest.raises(InvalidArgumentError):
            repetition_score(np.ones((15, 40)), 8)

    def test_min_lag_validation(self, noise):
        with pytest.raises(InvalidArgumentError):
            repetition_score(noise, 0)

    def test_lag_negation_symmetry(self, noise):
        ac = autocorrelation(noise)
        flipped = np.roll(ac[::-1, ::-1], (1, 1), axis=(0, 1))
        np.testing.assert_allclose(ac, flipped, rtol=0, atol=1e-12)


class TestInvariance:
    @given(st.floats(-50, 50), st.floats(0.01, 100), st.integers(0, 2**16))
    @settings(max_examples=30, deadline=None)
    def test_offset_and_scale(self, offset, scale, seed):
        x = np.random.default_rng(seed).normal(size=(32, 32))
        y = scale * x + offset
        assert abs(hf_energy_ratio(y) - hf_energy_ratio(x)) <= 1e-9
        assert abs(repetition_score(y, 8) - repetition_score(x, 8)) <= 1e-9
        # the DC band moves with the offset; every other band only scales
        px, py = spectrum_profile(x).bins[1:], spectrum_profile(y).bins[1:]
        np.testing.assert_allclose(py, scale**2 * px, rtol=1e-9, atol=1e-12)

    def test_offset_leaves_non_dc_spectrum(self, noise):
        a, b = spectrum_profile(noise).bins, spectrum_profile(noise + 5.0).bins
        np.testing.assert_allclose(b[1:], a[1:], rtol=1e-9, atol=1e-12)


class TestImageMetrics:
    def test_keys(self, rs):
        m = image_metrics(rs.normal(size=(3, 16, 16)))
        assert set(m) == {"hf_energy_ratio", "repetition_score", "spectrum"}
        assert len(m["spectrum"]) == 32

    def test_small_image_clamps_lag(self):
        m = image_metrics(np.zeros((3, 4, 4)))
        assert m["repetition_score"] == 0.0 and m["hf_energy_ratio"] == 0.0

"""Tests for signal containers, excitation generation, and spectra."""

import numpy as np
import pytest

from beyondnyq.signals import (
    FastSignal,
    FirModel,
    FrfSample,
    SlowSignal,
    dft,
    downsample,
    fir_frf,
    full_band,
    random_multisine,
    random_noise,
    read_signal_csv,
    snr_variance_ratio,
    write_signal_csv,
)


def naive_dft(x):
    """O(N^2) summation oracle: X(k) = sum_t x(t) exp(-2j pi k t / N)."""
    n = len(x)
    k = np.arange(n)
    return np.array([np.sum(x * np.exp(-2j * np.pi * kk * k / n)) for kk in range(n)])


class TestContainers:
    def test_fast_signal_validation(self):
        with pytest.raises(ValueError):
            FastSignal(samples=[], period=0.1)
        with pytest.raises(ValueError):
            FastSignal(samples=[1.0, np.nan], period=0.1)
        with pytest.raises(ValueError):
            FastSignal(samples=[1.0], period=0.0)

    def test_slow_signal_validation(self):
        with pytest.raises(ValueError):
            SlowSignal(samples=[1.0], period=0.3, factor=0)
        sig = SlowSignal(samples=[1.0, 2.0], period=0.3, factor=3)
        assert sig.fast_period == pytest.approx(0.1)

    def test_samples_are_immutable(self):
        sig = FastSignal(samples=[1.0, 2.0], period=0.1)
        with pytest.raises(ValueError):
            sig.samples[0] = 5.0

    def test_frf_sample_rejects_negative_frequency(self):
        with pytest.raises(ValueError):
            FrfSample(omega=-1.0, value=1 + 0j)


class TestDownsample:
    def test_every_third_sample(self):
        x = FastSignal(samples=[1, 2, 3, 4, 5, 6], period=0.1)
        y = downsample(x, 3)
        assert y.samples.tolist() == [1.0, 4.0]
        assert y.period == pytest.approx(0.3)
        assert y.factor == 3

    def test_factor_one_is_identity(self):
        x = FastSignal(samples=[3.0, 1.0, 4.0], period=0.5)
        y = downsample(x, 1)
        assert np.array_equal(y.samples, x.samples)
        assert y.period == x.period

    def test_benchmark_length(self):
        # 600 fast samples at factor 3 give the benchmark's 200 outputs
        x = random_noise(600, 0.1, 1.0, seed=0)
        assert len(downsample(x, 3)) == 200

    def test_composition_equals_combined_factor(self):
        x = random_noise(241, 0.01, 1.0, seed=7)
        twice = downsample(downsample(x, 2), 3)
        once = downsample(x, 6)
        m = min(len(twice), len(once))
        assert np.array_equal(twice.samples[:m], once.samples[:m])
        assert twice.factor == once.factor == 6

    def test_invalid_factor(self):
        x = FastSignal(samples=[1.0, 2.0], period=0.1)
        with pytest.raises(ValueError):
            downsample(x, 0)


class TestRandomMultisine:
    def test_single_bin_is_pure_cosine(self):
        n, k, rms = 64, 5, 0.7
        sig = random_multisine(n, 0.1, band=(k, k), rms=rms, seed=11)
        assert np.sqrt(np.mean(sig.samples**2)) == pytest.approx(rms, rel=1e-12)
        spectrum = np.abs(dft(sig))
        excited = np.argsort(spectrum)[-2:]
        assert set(excited) == {k, n - k}

    def test_deterministic_given_seed(self):
        a = random_multisine(128, 0.1, rms=1.0, seed=42)
        b = random_multisine(128, 0.1, rms=1.0, seed=42)
        assert np.array_equal(a.samples, b.samples)
        c = random_multisine(128, 0.1, rms=1.0, seed=43)
        assert not np.array_equal(a.samples, c.samples)

    def test_flat_amplitude_spectrum_full_band(self):
        n = 600
        sig = random_multisine(n, 0.1, rms=1.0, seed=3)
        spectrum = np.abs(dft(sig))
        lo, hi = full_band(n)
        excited = spectrum[lo : hi + 1]
        assert np.max(excited) - np.min(excited) <= 1e-9 * np.max(excited)
        # nothing outside the excited band (and its mirror) except rounding
        assert spectrum[0] <= 1e-6 * np.max(excited)

    def test_rms_scaling_exact(self):
        sig = random_multisine(600, 0.1, rms=2.5, seed=9)
        assert np.sqrt(np.mean(sig.samples**2)) == pytest.approx(2.5, rel=1e-12)

    def test_empty_band_rejected(self):
        with pytest.raises(ValueError):
            random_multisine(64, 0.1, band=(5, 4), rms=1.0, seed=0)
        with pytest.raises(ValueError):
            random_multisine(64, 0.1, band=(0, 4), rms=1.0, seed=0)
        with pytest.raises(ValueError):
            random_multisine(64, 0.1, band=(1, 33), rms=1.0, seed=0)


class TestRandomNoise:
    def test_variance_near_rms_squared(self):
        sig = random_noise(100_000, 0.1, rms=1.0, seed=5)
        assert np.var(sig.samples) == pytest.approx(1.0, rel=0.1)

    def test_mean_near_zero(self):
        sig = random_noise(100_000, 0.1, rms=1.0, seed=6)
        assert abs(np.mean(sig.samples)) < 0.02

    def test_deterministic(self):
        a = random_noise(256, 0.1, rms=0.5, seed=1)
        b = random_noise(256, 0.1, rms=0.5, seed=1)
        assert np.array_equal(a.samples, b.samples)

    def test_invalid_rms(self):
        with pytest.raises(ValueError):
            random_noise(16, 0.1, rms=0.0, seed=0)


class TestFirFrf:
    def test_unit_impulse_is_flat(self):
        model = FirModel(theta=[1.0], period=0.1)
        for sample in fir_frf(model, [0.0, 3.0, 40.0]):
            assert sample.value == pytest.approx(1 + 0j)

    def test_one_sample_delay(self):
        period = 0.1
        model = FirModel(theta=[0.0, 1.0], period=period)
        lo, hi = fir_frf(model, [0.0, np.pi / period])
        assert lo.value == pytest.approx(1 + 0j)
        assert hi.value == pytest.approx(-1 + 0j)

    def test_two_tap_average_quarter_band(self):
        # 0.5 + 0.5 exp(-j pi/2) = 0.5 - 0.5j by direct summation
        period = 0.1
        model = FirModel(theta=[0.5, 0.5], period=period)
        (sample,) = fir_frf(model, [np.pi / (2 * period)])
        assert sample.value == pytest.approx(0.5 - 0.5j, abs=1e-12)

    def test_periodic_in_fast_rate(self):
        rng = np.random.default_rng(0)
        model = FirModel(theta=rng.normal(size=24), period=0.05)
        omegas = np.array([0.3, 7.0, 19.0])
        shifted = omegas + 2 * np.pi / model.period
        base = [s.value for s in fir_frf(model, omegas)]
        wrap = [s.value for s in fir_frf(model, shifted)]
        np.testing.assert_allclose(wrap, base, atol=1e-12)

    def test_evaluable_beyond_slow_nyquist(self):
        model = FirModel(theta=[1.0, -0.5, 0.25], period=0.1)
        slow_nyquist = np.pi / 0.3
        values = fir_frf(model, [2 * slow_nyquist])
        assert np.isfinite(values[0].value.real)


class TestDft:
    def test_impulse(self):
        np.testing.assert_allclose(dft([1.0, 0.0, 0.0, 0.0]), np.ones(4), atol=1e-15)

    def test_constant(self):
        np.testing.assert_allclose(dft([1.0, 1.0, 1.0, 1.0]), [4, 0, 0, 0], atol=1e-12)

    def test_matches_naive_summation(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=64)
        np.testing.assert_allclose(dft(x), naive_dft(x), atol=1e-10)

    @pytest.mark.parametrize("n", [8, 37, 128, 256])
    def test_matches_naive_various_lengths(self, n):
        rng = np.random.default_rng(n)
        x = rng.normal(size=n)
        np.testing.assert_allclose(dft(x), naive_dft(x), atol=1e-10)

    def test_accepts_signals(self):
        sig = FastSignal(samples=[1.0, 2.0, 3.0], period=0.1)
        np.testing.assert_allclose(dft(sig), naive_dft(sig.samples), atol=1e-12)


class TestSnrVarianceRatio:
    def test_definition(self):
        rng = np.random.default_rng(0)
        y = FastSignal(samples=np.sqrt(40.0) * rng.normal(size=4000), period=0.1)
        e = FastSignal(samples=rng.normal(size=4000), period=0.1)
        expected = np.var(y.samples) / np.var(e.samples)
        assert snr_variance_ratio(y, e) == pytest.approx(expected)

    def test_identical_signals_give_one(self):
        y = FastSignal(samples=[1.0, -2.0, 0.5], period=0.1)
        assert snr_variance_ratio(y, y) == pytest.approx(1.0)

    def test_scaled_noise_achieves_target_ratio(self):
        target = 25.0
        y = random_multisine(600, 0.1, rms=1.0, seed=2)
        w = random_noise(600, 0.1, rms=1.0, seed=3)
        sigma = np.sqrt(np.var(y.samples) / (target * np.var(w.samples)))
        e = FastSignal(samples=sigma * w.samples, period=0.1)
        assert snr_variance_ratio(y, e) == pytest.approx(target, rel=0.05)

    def test_zero_noise_variance_rejected(self):
        y = FastSignal(samples=[1.0, 2.0], period=0.1)
        e = FastSignal(samples=[3.0, 3.0], period=0.1)
        with pytest.raises(ValueError):
            snr_variance_ratio(y, e)


class TestSignalCsv:
    def test_round_trip(self, tmp_path):
        sig = random_noise(40, 0.1, 1.0, seed=8)
        path = tmp_path / "u.csv"
        write_signal_csv(sig, path)
        values = read_signal_csv(path)
        assert np.array_equal(values, sig.samples)

    def test_rewrite_is_byte_identical(self, tmp_path):
        sig = random_noise(25, 0.1, 1.0, seed=9)
        first = tmp_path / "a.csv"
        second = tmp_path / "b.csv"
        write_signal_csv(sig, first)
        write_signal_csv(FastSignal(read_signal_csv(first), 0.1), second)
        assert first.read_bytes() == second.read_bytes()

    def test_header_required(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("0,1.0\n1,2.0\n")
        with pytest.raises(ValueError):
            read_signal_csv(path)

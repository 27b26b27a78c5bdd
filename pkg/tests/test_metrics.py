"""Image and link quality metrics against hand values and scikit-image."""
import math

import numpy as np
import pytest

from djscc import channel as ch
from djscc import metrics as mt
from djscc.autodiff import Tensor
from djscc.rng import stream
from oracles import ssim_reference


def _img(seed, shape=(3, 32, 32)):
    return np.clip(np.random.default_rng(seed).standard_normal(shape) * 0.4,
                   -1.0, 1.0)


class TestPsnr:
    def test_identical_is_infinite(self):
        x = _img(0)
        assert mt.psnr(x, x) == math.inf

    def test_hand_value(self):
        # x = 0, y = 0.5 on [-1,1]: mse 0.25, peak 2 -> 10*log10(16)
        x = np.zeros((3, 8, 8))
        y = np.full((3, 8, 8), 0.5)
        assert mt.psnr(x, y) == pytest.approx(10.0 * math.log10(16.0), abs=1e-12)

    def test_strictly_decreasing_in_noise(self):
        x = _img(1)
        r = np.random.default_rng(2)
        n = r.standard_normal(x.shape)
        vals = [mt.psnr(x, x + s * n) for s in (0.01, 0.1, 0.5)]
        assert vals[0] > vals[1] > vals[2]

    def test_peak_shifts_by_constant(self):
        x, y = _img(3), _img(4)
        # doubling peak adds 10*log10(4) dB
        assert mt.psnr(x, y, peak=4.0) - mt.psnr(x, y, peak=2.0) == \
            pytest.approx(10.0 * math.log10(4.0), abs=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mt.mse(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


class TestSsim:
    def test_identical_is_one(self):
        x = _img(5)
        assert mt.ssim(x, x) == pytest.approx(1.0, abs=1e-9)

    def test_negated_zero_mean_pattern_is_nonpositive(self):
        # a checkerboard has (near) zero mean in every window, so the
        # luminance term stays ~1 while negation flips the structure term
        i, j = np.meshgrid(np.arange(24), np.arange(24), indexing="ij")
        x = (0.5 * (-1.0) ** (i + j))[None]
        assert mt.ssim(x, -x) <= 0.0

    def test_constant_offset_monotone(self):
        x = np.zeros((1, 16, 16))
        deltas = [1e-4, 0.001, 0.01, 0.05, 0.2, 0.5]
        vals = [mt.ssim(x, x + d) for d in deltas]
        assert vals[0] > 0.9999  # -> 1 as the offset vanishes
        for a, b in zip(vals, vals[1:]):
            assert b < a

    @pytest.mark.parametrize("seed", [10, 11, 12, 13, 14])
    def test_matches_skimage(self, seed):
        x = _img(seed)
        y = np.clip(x + 0.15 * np.random.default_rng(seed + 50).standard_normal(x.shape),
                    -1.0, 1.0)
        got = mt.ssim(x, y)
        want = ssim_reference(x, y, peak=2.0)
        assert got == pytest.approx(want, abs=1e-7)

    def test_matches_skimage_other_peak(self):
        r = np.random.default_rng(20)
        x = r.uniform(0, 1, (3, 40, 40))
        y = np.clip(x + 0.1 * r.standard_normal(x.shape), 0, 1)
        assert mt.ssim(x, y, peak=1.0) == pytest.approx(
            ssim_reference(x, y, peak=1.0), abs=1e-7)

    def test_window_shrinks_on_small_images(self):
        x = _img(7, (3, 8, 8))
        v = mt.ssim(x, x)  # 8x8 forces a 7-tap window; must not raise
        assert v == pytest.approx(1.0, abs=1e-9)

    def test_too_small_raises(self):
        with pytest.raises(ValueError):
            mt.ssim(np.zeros((3, 2, 2)), np.zeros((3, 2, 2)))

    def test_accepts_2d_and_4d(self):
        x2 = _img(8, (16, 16))
        assert mt.ssim(x2, x2) == pytest.approx(1.0, abs=1e-9)
        x4 = _img(9, (2, 3, 16, 16))
        assert mt.ssim(x4, x4) == pytest.approx(1.0, abs=1e-9)


class TestMsSsim:
    def test_identical_is_one(self):
        x = _img(15)
        assert mt.ms_ssim(x, x) == pytest.approx(1.0, abs=1e-9)

    def test_decreases_with_noise(self):
        x = _img(16)
        n = np.random.default_rng(17).standard_normal(x.shape)
        a = mt.ms_ssim(x, np.clip(x + 0.05 * n, -1, 1))
        b = mt.ms_ssim(x, np.clip(x + 0.4 * n, -1, 1))
        assert a > b

    def test_in_unit_interval_for_positive_images(self):
        r = np.random.default_rng(18)
        x = r.uniform(-1, 1, (3, 32, 32))
        y = r.uniform(-1, 1, (3, 32, 32))
        v = mt.ms_ssim(x, y)
        assert 0.0 <= v <= 1.0

    def test_single_scale_reduces_to_ssim(self):
        x, y = _img(19), _img(20)
        assert mt.ms_ssim(x, y, scales=1) == pytest.approx(
            max(mt.ssim(x, y), 0.0), abs=1e-12)

    def test_scale_bounds(self):
        x = _img(21)
        with pytest.raises(ValueError):
            mt.ms_ssim(x, x, scales=0)
        with pytest.raises(ValueError):
            mt.ms_ssim(x, x, scales=6)

    def test_weights_are_the_standard_five(self):
        assert mt._MSSSIM_WEIGHTS == (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

    def test_downsample_averages_2x2(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        d = mt._downsample2(x)
        np.testing.assert_allclose(d[0, 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_downsample_crops_odd(self):
        x = np.ones((1, 1, 5, 7))
        assert mt._downsample2(x).shape == (1, 1, 2, 3)


class TestEmpiricalSnr:
    def _tx(self, k, seed):
        r = np.random.default_rng(seed)
        v = ch.ComplexSymbolVector(Tensor(r.standard_normal((1, k))),
                                   Tensor(r.standard_normal((1, k))))
        return ch.normalize_power(v)

    def test_noiseless_is_infinite(self):
        tx = self._tx(64, 0)
        rx = ch.transmit_symbols(tx, 1.0 + 0.0j, 0.0, stream(0, "t"))
        assert mt.empirical_snr(tx, rx, 1.0 + 0.0j) == math.inf

    def test_nominal_5db_within_tenth(self):
        tx = self._tx(1_000_000, 1)
        sigma2 = ch.snr_to_noise_power(5.0)
        rx = ch.transmit_symbols(tx, 1.0 + 0.0j, sigma2, stream(1, "t"))
        assert abs(mt.empirical_snr(tx, rx, 1.0 + 0.0j) - 5.0) < 0.1

    def test_gain_included_in_definition(self):
        # h = 2 quadruples signal energy; nominal gamma defined with |h|^2
        tx = self._tx(500_000, 2)
        h = 2.0 + 0.0j
        sigma2 = ch.snr_to_noise_power(5.0, h_var=4.0)  # keeps nominal at 5 dB
        rx = ch.transmit_symbols(tx, h, sigma2, stream(2, "t"))
        assert abs(mt.empirical_snr(tx, rx, h) - 5.0) < 0.1

    def test_batched_fading_blocks_aggregate_to_nominal(self):
        # many independent fading blocks: energy-aggregated SNR matches the
        # nominal value defined through E|h|^2
        r = np.random.default_rng(3)
        n, k = 4096, 256
        v = ch.ComplexSymbolVector(Tensor(r.standard_normal((n, k))),
                                   Tensor(r.standard_normal((n, k))))
        tx = ch.normalize_power(v)
        s = math.sqrt(0.5)
        h = (r.standard_normal((n, 1)) * s, r.standard_normal((n, 1)) * s)
        sigma2 = ch.snr_to_noise_power(5.0, h_var=1.0)
        rx = ch.transmit_symbols(tx, h, sigma2, stream(3, "t"))
        assert abs(mt.empirical_snr(tx, rx, h) - 5.0) < 0.1


class TestReport:
    def test_image_metrics_keys(self):
        x, y = _img(30), _img(31)
        m = mt.image_metrics(x, y)
        assert set(m) == {"psnr_db", "ssim", "ms_ssim", "mse"}
        assert m["mse"] == pytest.approx(mt.mse(x, y))

    def test_aggregate_means(self):
        rep = mt.MetricReport()
        rep.add({"psnr_db": 10.0, "ssim": 0.5, "ms_ssim": 0.4, "mse": 0.1})
        rep.add({"psnr_db": 20.0, "ssim": 0.7, "ms_ssim": 0.6, "mse": 0.3})
        agg = rep.aggregate()
        assert agg["psnr_db"] == pytest.approx(15.0)
        assert agg["mse"] == pytest.approx(0.2)

    def test_aggregate_empty_raises(self):
        with pytest.raises(ValueError):
            mt.MetricReport().aggregate()

import numpy as np
import pytest
from oracles import direct_ssim

from luxmix.metrics import PSNR_CAP_DB, channel_rescale, evaluate, psnr, ssim


class TestChannelRescale:
    def test_double_prediction_halves(self):
        rng = np.random.default_rng(0)
        gt = rng.uniform(0.1, 1.0, size=(6, 6, 3))
        rescaled, scales = channel_rescale(2.0 * gt, gt)
        assert np.allclose(scales, 0.5)
        assert np.allclose(rescaled, gt)

    def test_identity(self):
        rng = np.random.default_rng(1)
        gt = rng.uniform(0, 1, size=(5, 5, 3))
        rescaled, scales = channel_rescale(gt, gt)
        assert np.allclose(scales, 1.0)
        assert np.allclose(rescaled, gt)

    def test_zero_channel_keeps_unit_scale(self):
        gt = np.ones((4, 4, 3))
        pred = np.ones((4, 4, 3))
        pred[..., 2] = 0.0
        _, scales = channel_rescale(pred, gt)
        assert scales[2] == 1.0

    def test_matches_grid_search_oracle(self):
        rng = np.random.default_rng(2)
        pred = rng.uniform(0.1, 1.0, size=(8, 8, 3))
        gt = rng.uniform(0.1, 1.0, size=(8, 8, 3))
        _, scales = channel_rescale(pred, gt)
        grid = np.linspace(0.01, 3.0, 20001)
        for ch in range(3):
            errs = [np.sum((s * pred[..., ch] - gt[..., ch]) ** 2) for s in grid]
            s_star = grid[int(np.argmin(errs))]
            assert abs(scales[ch] - s_star) <= (grid[1] - grid[0])

    def test_never_increases_mse(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            pred = rng.uniform(0, 2, size=(6, 6, 3))
            gt = rng.uniform(0, 1, size=(6, 6, 3))
            rescaled, _ = channel_rescale(pred, gt)
            assert np.mean((rescaled - gt) ** 2) <= np.mean((pred - gt) ** 2) + 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            channel_rescale(np.zeros((2, 2, 3)), np.zeros((3, 2, 3)))


class TestPsnr:
    def test_identical_caps(self):
        img = np.full((4, 4, 3), 0.5)
        value, capped = psnr(img, img)
        assert capped and value == PSNR_CAP_DB

    def test_constant_offset_closed_form(self):
        a = np.zeros((8, 8, 3))
        b = np.full((8, 8, 3), 0.1)
        value, capped = psnr(a, b)
        assert not capped
        assert value == pytest.approx(20.0, abs=1e-9)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(0, 1, size=(5, 7, 3))
        b = rng.uniform(0, 1, size=(5, 7, 3))
        value, _ = psnr(a, b)
        mse = 0.0
        for x, y in zip(a.ravel(), b.ravel()):
            mse += (x - y) ** 2
        mse /= a.size
        assert value == pytest.approx(10.0 * np.log10(1.0 / mse), abs=1e-9)


class TestSsim:
    def test_identical_images(self):
        rng = np.random.default_rng(5)
        img = rng.uniform(0, 1, size=(16, 16))
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-9)

    def test_constant_pair_against_direct_formula(self):
        a = np.full((12, 12), 0.25)
        b = 1.0 - a  # 0.75 constant
        assert ssim(a, b) == pytest.approx(direct_ssim(a, b), abs=1e-9)

    def test_random_pairs_against_direct_formula(self):
        rng = np.random.default_rng(6)
        a = rng.uniform(0, 1, size=(14, 14))
        b = rng.uniform(0, 1, size=(14, 14))
        assert ssim(a, b) == pytest.approx(direct_ssim(a, b), abs=1e-6)

    def test_symmetry(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            a = rng.uniform(0, 1, size=(12, 12, 3))
            b = rng.uniform(0, 1, size=(12, 12, 3))
            assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_rejects_small_images(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestProtocolInvariance:
    def test_psnr_invariant_to_channel_scaling(self):
        rng = np.random.default_rng(8)
        pred = rng.uniform(0.05, 1.0, size=(16, 16, 3))
        gt = rng.uniform(0.05, 1.0, size=(16, 16, 3))
        base, _ = psnr(channel_rescale(pred, gt)[0], gt)
        for alpha in (0.1, 1.0, 10.0):
            scaled = pred * np.array([alpha, 1.0, 1.0 / alpha])
            value, _ = psnr(channel_rescale(scaled, gt)[0], gt)
            assert abs(value - base) <= 1e-9

    def test_evaluate_bundles_protocol(self):
        rng = np.random.default_rng(9)
        gt = rng.uniform(0.1, 1.0, size=(16, 16, 3))
        result = evaluate(2.0 * gt, gt)
        assert result.capped
        assert np.allclose(result.scales, 0.5)
        assert result.ssim == pytest.approx(1.0, abs=1e-9)

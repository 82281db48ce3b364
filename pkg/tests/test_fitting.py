import numpy as np
import pytest
import torch
import torch.nn.functional as F
from oracles import brute_force_knn, direct_ssim

from luxmix.camera import Camera, Pose
from luxmix.image import HdrImage, LdrImage, ToneCurve, tonemap_curve
from luxmix.splats import (
    FitConfig,
    GaussianCloud,
    LossReport,
    RemixState,
    inv_softplus,
    random_cloud,
    render_remix,
)
from luxmix.fitting import (
    _render_slots,
    _TorchCloud,
    fit_stage1,
    fit_stage2,
    gradients,
    knn_indices,
    loss_comp,
    loss_olat,
    loss_smooth,
    ssim_torch,
    total_loss,
)


def toy_camera(res=32):
    return Camera.perspective(70.0, res, res, Pose(np.eye(3), [0.0, 0.0, 1.0]))


def toy_cloud(rng, n=20, m=2):
    return random_cloud(rng, n, num_slots=m, center=(2.5, 0.0, 1.0), extent=0.6,
                        scale_range=(0.05, 0.2))


def own_renders(cloud, cam):
    """The cloud's own per-slot renders through the public f32-free path."""
    tc = _TorchCloud(cloud)
    with torch.no_grad():
        stack = _render_slots(tc, cam)
    return [HdrImage(cam.width, cam.height,
                     np.maximum(stack[i].numpy(), 0.0).astype(np.float32))
            for i in range(cloud.num_slots)]


class TestLossOlat:
    def test_zero_on_own_renders(self):
        rng = np.random.default_rng(0)
        cloud = toy_cloud(rng)
        cam = toy_camera()
        targets = [own_renders(cloud, cam)]
        value = loss_olat(cloud, [cam], targets, lambda_dssim=0.2)
        assert value == pytest.approx(0.0, abs=1e-6)

    def test_constant_offset_gives_l1_delta(self):
        rng = np.random.default_rng(1)
        cloud = toy_cloud(rng, m=1)
        cam = toy_camera()
        base = own_renders(cloud, cam)[0]
        delta = 0.125
        shifted = HdrImage(cam.width, cam.height, base.data + delta)
        value = loss_olat(cloud, [cam], [[shifted]], lambda_dssim=0.0)
        assert value == pytest.approx(delta, abs=1e-5)

    def test_dssim_matches_direct_oracle_8x8(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(0, 1, size=(8, 8))
        b = rng.uniform(0, 1, size=(8, 8))
        ours = float(ssim_torch(torch.as_tensor(a), torch.as_tensor(b)))
        assert ours == pytest.approx(direct_ssim(a, b), abs=1e-6)

    def test_light_count_mismatch_rejected(self):
        rng = np.random.default_rng(3)
        cloud = toy_cloud(rng, m=2)
        cam = toy_camera()
        bad = [[HdrImage.full(32, 32, 0.1)]]  # one target, two slots
        with pytest.raises(ValueError):
            loss_olat(cloud, [cam], bad)

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(4)
        cloud = toy_cloud(rng, m=1)
        with pytest.raises(ValueError):
            loss_olat(cloud, [toy_camera(res=32)], [[HdrImage.full(16, 16, 0.1)]])


class TestLossComp:
    def test_zero_on_own_composite(self):
        rng = np.random.default_rng(5)
        cloud = toy_cloud(rng)
        cam = toy_camera()
        state = RemixState(rng.uniform(0.5, 1.5, size=(2, 3)))
        curve = ToneCurve(2.2, 1e-3)
        original = tonemap_curve(render_remix(cloud, cam, state), curve)
        value = loss_comp(cloud, [cam], [original], state, curve)
        assert value == pytest.approx(0.0, abs=1e-6)

    def test_identity_curve_reduces_to_l1(self):
        rng = np.random.default_rng(6)
        cloud = toy_cloud(rng)
        cam = toy_camera()
        state = RemixState(np.ones((2, 3)))
        curve = ToneCurve(1.0, 0.0)
        original = LdrImage(32, 32, rng.uniform(0, 1, size=(32, 32, 3)))
        value = loss_comp(cloud, [cam], [original], state, curve)
        remixed = np.clip(render_remix(cloud, cam, state).data, 0.0, 1.0)
        expected = np.abs(remixed.astype(np.float64) - original.data).mean()
        assert value == pytest.approx(expected, abs=1e-5)

    def test_gamma_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        cloud = toy_cloud(rng, n=10, m=2)
        cam = toy_camera()
        state = RemixState(rng.uniform(0.5, 1.5, size=(2, 3)))
        originals = [LdrImage(32, 32, rng.uniform(0.05, 0.95, size=(32, 32, 3)))]
        targets = [own_renders(cloud, cam)]
        cfg = FitConfig(knn_k=4)
        g = gradients(cloud, [cam], targets, originals, state,
                      ToneCurve(2.2, 1e-3), cfg)["gamma"]
        h = 1e-4
        lp = total_loss(cloud, [cam], targets, originals, state,
                        ToneCurve(2.2 + h, 1e-3), cfg).total
        lm = total_loss(cloud, [cam], targets, originals, state,
                        ToneCurve(2.2 - h, 1e-3), cfg).total
        fd = (lp - lm) / (2 * h)
        assert abs(float(g) - fd) / max(abs(fd), 1e-5) <= 1e-3


class TestLossSmooth:
    def test_identical_coefficients_zero(self):
        rng = np.random.default_rng(8)
        cloud = toy_cloud(rng, n=30)
        raw = np.broadcast_to(cloud.light_raw[:1], cloud.light_raw.shape).copy()
        cloud = GaussianCloud(cloud.positions, cloud.log_scales, cloud.rotations,
                              cloud.opacities, raw)
        assert loss_smooth(cloud, k=4) == pytest.approx(0.0, abs=1e-12)

    def test_two_gaussian_hand_value(self):
        # K=1, difference vector d: loss = (1/2)(|d|^2 + |-d|^2) = |d|^2
        raw = inv_softplus(np.array([[[0.5, 0.5, 0.5]], [[1.0, 0.75, 0.5]]]))
        cloud = GaussianCloud(
            positions=np.array([[0.0, 0, 0], [1.0, 0, 0]]),
            log_scales=np.zeros((2, 3)),
            rotations=np.tile([1.0, 0, 0, 0], (2, 1)),
            opacities=np.zeros(2),
            light_raw=raw,
        )
        d = cloud.light_coeffs[0].ravel() - cloud.light_coeffs[1].ravel()
        assert loss_smooth(cloud, k=1) == pytest.approx(float(d @ d), rel=1e-9)

    def test_knn_matches_brute_force_sets(self):
        rng = np.random.default_rng(9)
        pts = rng.uniform(0, 1, size=(50, 3))
        idx = knn_indices(pts, k=5)
        expected = brute_force_knn(pts, 5)
        for i in range(50):
            assert set(idx[i].tolist()) == expected[i]

    def test_too_few_gaussians_rejected(self):
        rng = np.random.default_rng(10)
        cloud = toy_cloud(rng, n=4)
        with pytest.raises(ValueError):
            loss_smooth(cloud, k=8)

    def test_smooth_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        cloud = toy_cloud(rng, n=12, m=2)
        idx = torch.as_tensor(knn_indices(cloud.positions, 3))
        raw = torch.as_tensor(cloud.light_raw).requires_grad_(True)
        from luxmix.fitting import _smooth_term

        loss = _smooth_term(F.softplus(raw).reshape(12, -1), idx)
        loss.backward()
        h = 1e-6
        flat = cloud.light_raw.copy()
        for i in [0, 7, 35]:
            p = flat.copy().ravel()
            p[i] += h
            q = flat.copy().ravel()
            q[i] -= h

            def val(arr):
                t = torch.as_tensor(arr.reshape(flat.shape))
                return float(_smooth_term(F.softplus(t).reshape(12, -1), idx))

            fd = (val(p) - val(q)) / (2 * h)
            assert abs(fd - float(raw.grad.ravel()[i])) <= 1e-6 + 1e-4 * abs(fd)


class TestGradients:
    def test_all_groups_match_finite_differences(self):
        rng = np.random.default_rng(12)
        cloud = toy_cloud(rng, n=15, m=2)
        cam = toy_camera()
        targets = [[HdrImage(32, 32, rng.uniform(0, 1, size=(32, 32, 3)))
                    for _ in range(2)]]
        originals = [LdrImage(32, 32, rng.uniform(0, 1, size=(32, 32, 3)))]
        state = RemixState(rng.uniform(0.5, 1.5, size=(2, 3)))
        curve = ToneCurve(2.2, 1e-3)
        cfg = FitConfig(knn_k=4)
        g = gradients(cloud, [cam], targets, originals, state, curve, cfg)

        def loss_with(name, arr):
            fields = {f: getattr(cloud, f) for f in
                      ("positions", "log_scales", "rotations", "opacities", "light_raw")}
            st, cv = state, curve
            if name in fields:
                fields[name] = arr
            elif name == "w":
                st = RemixState(arr)
            elif name == "gamma":
                cv = ToneCurve(float(arr), curve.beta)
            else:
                cv = ToneCurve(curve.gamma, float(arr))
            return total_loss(GaussianCloud(**fields), [cam], targets, originals,
                              st, cv, cfg).total

        h = 1e-4
        for name in ("positions", "log_scales", "rotations", "opacities",
                     "light_raw", "w"):
            base = getattr(cloud, name) if name != "w" else state.weights
            ga = g[name].ravel()
            for i in rng.choice(base.size, size=min(8, base.size), replace=False):
                p = base.copy().ravel()
                p[i] += h
                q = base.copy().ravel()
                q[i] -= h
                fd = (loss_with(name, p.reshape(base.shape))
                      - loss_with(name, q.reshape(base.shape))) / (2 * h)
                err = abs(fd - ga[i]) / max(abs(fd), abs(ga[i]), 1e-5)
                assert err <= 1e-3, (name, i, fd, ga[i])


class TestLossReport:
    def test_total_is_weighted_sum(self):
        report = LossReport(0.5, 0.25, 0.125, lambda_comp=1.0, lambda_smooth=0.01)
        assert report.total == pytest.approx(0.5 + 0.25 + 0.01 * 0.125, abs=1e-15)

    def test_total_loss_report_consistency(self):
        rng = np.random.default_rng(13)
        cloud = toy_cloud(rng, n=12)
        cam = toy_camera()
        targets = [[HdrImage(32, 32, rng.uniform(0, 1, size=(32, 32, 3)))
                    for _ in range(2)]]
        originals = [LdrImage(32, 32, rng.uniform(0, 1, size=(32, 32, 3)))]
        report = total_loss(cloud, [cam], targets, originals,
                            RemixState(np.ones((2, 3))), ToneCurve(2.2, 1e-3),
                            FitConfig(knn_k=4))
        assert report.total == pytest.approx(
            report.l_olat + report.lambda_comp * report.l_comp
            + report.lambda_smooth * report.l_smooth, abs=1e-12)


def ring_views(rng, n_views=4, res=48):
    import math

    cams = []
    for i in range(n_views):
        ang = 2 * math.pi * i / n_views * 0.25  # gentle arc
        pos = np.array([0.0, 0.0, 1.0]) + np.array([-0.2 * i, 0.1 * i, 0.0])
        from luxmix.camera import rotation_from_angles

        cams.append(Camera.perspective(70.0, res, res,
                                       Pose(rotation_from_angles(ang * 0.2, 0.0), pos)))
    return cams


class TestFitStage1:
    def _setup(self, rng, res=48):
        truth = random_cloud(rng, 60, num_slots=1, center=(2.5, 0.0, 1.0), extent=0.7,
                             scale_range=(0.05, 0.15))
        cams = ring_views(rng, 4, res)
        images = []
        for cam in cams:
            img = np.clip(np.asarray(
                __import__("luxmix.splats", fromlist=["rasterize"]).rasterize(
                    truth, cam, truth.light_coeffs[:, 0, :]).data), 0, 1)
            images.append(LdrImage(res, res, img))
        return truth, cams, images

    def test_zero_iterations_returns_init(self):
        rng = np.random.default_rng(14)
        truth, cams, images = self._setup(rng)
        pts = truth.positions + rng.normal(0, 0.01, size=truth.positions.shape)
        cfg = FitConfig(iters_stage1=0)
        cloud = fit_stage1(cams, images, pts, None, cfg)
        from luxmix.splats import cloud_from_points

        expected = cloud_from_points(pts, None)
        assert np.array_equal(cloud.positions, expected.positions)
        assert np.array_equal(cloud.light_raw, expected.light_raw)

    def test_loss_decreases_over_first_100_iters(self):
        rng = np.random.default_rng(15)
        truth, cams, images = self._setup(rng)
        pts = truth.positions + rng.normal(0, 0.005, size=truth.positions.shape)
        colors = np.clip(truth.light_coeffs[:, 0, :] + rng.normal(0, 0.05, (60, 3)),
                         1e-3, None)

        def full_loss(cloud):
            tc = _TorchCloud(cloud)
            with torch.no_grad():
                total = 0.0
                for cam, img in zip(cams, images):
                    render = _render_slots(tc, cam)[0]
                    total += float((render - torch.as_tensor(
                        img.data, dtype=torch.float64)).abs().mean())
            return total / len(cams)

        start = full_loss(fit_stage1(cams, images, pts, colors,
                                     FitConfig(iters_stage1=0)))
        end = full_loss(fit_stage1(cams, images, pts, colors,
                                   FitConfig(iters_stage1=100)))
        assert end < start

    def test_requires_two_views(self):
        rng = np.random.default_rng(16)
        truth, cams, images = self._setup(rng)
        with pytest.raises(ValueError):
            fit_stage1(cams[:1], images[:1], truth.positions, None, FitConfig())


class TestFitStage2:
    def _expanded(self, cloud, m):
        base = np.logaddexp(0.0, cloud.light_raw[:, 0, :])
        light_raw = np.repeat(inv_softplus(np.maximum(base / m, 1e-6))[:, None, :],
                              m, axis=1)
        return GaussianCloud(cloud.positions, cloud.log_scales, cloud.rotations,
                             cloud.opacities, light_raw)

    def test_frozen_phase_keeps_geometry_bitwise(self):
        rng = np.random.default_rng(17)
        cloud = random_cloud(rng, 40, num_slots=1, center=(2.5, 0, 1), extent=0.6)
        cams = ring_views(rng, 2, 32)
        m = 2
        targets = [[HdrImage(32, 32, rng.uniform(0, 0.5, size=(32, 32, 3)))
                    for _ in range(m)] for _ in cams]
        originals = [LdrImage(32, 32, rng.uniform(0, 1, size=(32, 32, 3)))
                     for _ in cams]
        cfg = FitConfig(iters_joint=5, iters_frozen=8, smooth_every=4, knn_k=4)
        after_joint = fit_stage2(cloud, cams, targets, originals,
                                 FitConfig(iters_joint=5, iters_frozen=0, knn_k=4))
        full = fit_stage2(cloud, cams, targets, originals, cfg)
        assert np.array_equal(full.cloud.positions, after_joint.cloud.positions)
        assert np.array_equal(full.cloud.log_scales, after_joint.cloud.log_scales)
        assert np.array_equal(full.cloud.rotations, after_joint.cloud.rotations)
        assert np.array_equal(full.cloud.opacities, after_joint.cloud.opacities)
        assert not np.array_equal(full.cloud.light_raw, after_joint.cloud.light_raw)

    def _fixed_point_setup(self, rng):
        cloud = random_cloud(rng, 30, num_slots=1, center=(2.5, 0, 1), extent=0.5)
        cams = ring_views(rng, 2, 32)
        m = 2
        expanded = self._expanded(cloud, m)
        tc = _TorchCloud(expanded, dtype=torch.float32)
        targets = []
        for cam in cams:
            with torch.no_grad():
                stack = _render_slots(tc, cam)
            targets.append([HdrImage(32, 32, np.maximum(stack[i].numpy(), 0.0))
                            for i in range(m)])
        originals = [LdrImage(32, 32, np.zeros((32, 32, 3), dtype=np.float32))
                     for _ in cams]
        return cloud, expanded, cams, targets, originals

    def test_fixed_point_exact_with_l1_only(self):
        # own renders as targets: L1 gradients are exactly zero, so Adam
        # never moves anything
        rng = np.random.default_rng(18)
        cloud, expanded, cams, targets, originals = self._fixed_point_setup(rng)
        cfg = FitConfig(iters_joint=6, iters_frozen=0, lambda_comp=0.0,
                        lambda_dssim=0.0, knn_k=4)
        res = fit_stage2(cloud, cams, targets, originals, cfg)
        assert all(t[4] == 0.0 for t in res.telemetry)
        # the fit runs in f32, so compare against the f32-roundtripped values
        f32 = lambda a: a.astype(np.float32).astype(np.float64)  # noqa: E731
        assert np.array_equal(res.cloud.positions, f32(expanded.positions))
        assert np.array_equal(res.cloud.light_raw, f32(expanded.light_raw))

    def test_fixed_point_within_step_tolerance(self):
        # with D-SSIM on, float roundoff leaves ~1e-12 gradients that Adam's
        # normalized step turns into lr-sized wiggles: stays within tolerance
        rng = np.random.default_rng(18)
        cloud, expanded, cams, targets, originals = self._fixed_point_setup(rng)
        iters = 6
        cfg = FitConfig(iters_joint=iters, iters_frozen=0, lambda_comp=0.0,
                        lambda_dssim=0.2, knn_k=4)
        res = fit_stage2(cloud, cams, targets, originals, cfg)
        assert all(abs(t[4]) < 1e-3 for t in res.telemetry)
        assert np.max(np.abs(res.cloud.positions - expanded.positions)) \
            <= 2 * iters * cfg.lr_positions
        assert np.max(np.abs(res.cloud.light_raw - expanded.light_raw)) \
            <= 2 * iters * cfg.lr_coeffs

    def test_light_count_mismatch_rejected(self):
        rng = np.random.default_rng(19)
        cloud = random_cloud(rng, 20, num_slots=1)
        cams = ring_views(rng, 2, 32)
        targets = [[HdrImage.full(32, 32, 0.1)] * 2, [HdrImage.full(32, 32, 0.1)] * 3]
        originals = [LdrImage(32, 32, np.zeros((32, 32, 3)))] * 2
        with pytest.raises(ValueError):
            fit_stage2(cloud, cams, targets, originals, FitConfig())

    def test_telemetry_total_identity(self):
        rng = np.random.default_rng(20)
        cloud = random_cloud(rng, 25, num_slots=1, center=(2.5, 0, 1), extent=0.5)
        cams = ring_views(rng, 2, 32)
        targets = [[HdrImage(32, 32, rng.uniform(0, 0.5, size=(32, 32, 3)))
                    for _ in range(2)] for _ in cams]
        originals = [LdrImage(32, 32, rng.uniform(0, 1, size=(32, 32, 3)))
                     for _ in cams]
        cfg = FitConfig(iters_joint=3, iters_frozen=4, smooth_every=2, knn_k=4)
        res = fit_stage2(cloud, cams, targets, originals, cfg)
        for step, olat, comp, smooth, tot in res.telemetry:
            expected = olat + cfg.lambda_comp * comp + cfg.lambda_smooth * smooth
            assert tot == pytest.approx(expected, rel=1e-5, abs=1e-7)

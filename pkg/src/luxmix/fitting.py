"""Differentiable splat rendering, the three fitting losses, and the two-stage fit.

torch supplies the autodiff; the finite-difference suites in the tests check
every analytic gradient against central differences, so autograd is an
implementation detail, not the correctness authority. Compositing avoids
atomic scatter-adds entirely (stable sorts + segmented cumulative sums), so
results do not depend on thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.spatial import cKDTree

from .camera import Camera
from .image import HdrImage, LdrImage, ToneCurve
from .splats import FitConfig, GaussianCloud, LossReport, RemixState, cloud_from_points, inv_softplus

_POWER_CUTOFF = 4.5  # 3 sigma
_TAPER_MARGIN = 1.5  # smooth fade-out band below the cutoff, in power units
_ALPHA_MAX = 0.999
_NEAR = 1e-2
_COV_BLUR = 0.3  # screen-space low-pass, pixels^2


def _quat_to_rotmat(q: torch.Tensor) -> torch.Tensor:
    q = q / q.norm(dim=1, keepdim=True).clamp_min(1e-12)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return torch.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        dim=1,
    ).reshape(-1, 3, 3)


def _max_radius(cam: Camera) -> float:
    """Screen-space radius cap; the taper cutoff shrinks with it, so capped
    splats still fade to zero inside their bounding box."""
    return max(8.0, 0.10 * max(cam.width, cam.height))


def _project(positions, log_scales, rotations, cam: Camera, dtype):
    """Screen means, conics, effective cutoffs and radii for every splat.

    Behind-camera splats get radius 0 (no pairs) and a huge power at any
    pixel, so both the build and the value pass agree they contribute 0.
    """
    rot = torch.as_tensor(cam.pose.rotation, dtype=dtype)
    origin = torch.as_tensor(cam.pose.position, dtype=dtype)
    p_cam = (positions - origin) @ rot  # world -> camera (x fwd, y left, z up)
    x_raw = p_cam[:, 0]
    visible = x_raw > _NEAR
    x = x_raw.clamp_min(_NEAR)
    y, z = p_cam[:, 1], p_cam[:, 2]
    f = cam.focal
    u = f * (-y / x) + cam.width / 2.0
    v = f * (-z / x) + cam.height / 2.0

    rmat = _quat_to_rotmat(rotations)
    # scale clamp guards f32 overflow if a degenerate splat drifts during a fit
    m = rmat * torch.exp(log_scales.clamp(-10.0, 3.0)).unsqueeze(1)  # R @ diag(s)
    cov_world = m @ m.transpose(1, 2)
    cov_cam = rot.T @ cov_world @ rot

    zeros = torch.zeros_like(x)
    jrow0 = torch.stack([f * y / (x * x), -f / x, zeros], dim=1)
    jrow1 = torch.stack([f * z / (x * x), zeros, -f / x], dim=1)
    jac = torch.stack([jrow0, jrow1], dim=1)  # (N, 2, 3)
    cov2d = jac @ cov_cam @ jac.transpose(1, 2)
    a = cov2d[:, 0, 0] + _COV_BLUR
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1] + _COV_BLUR

    # with the 0.3 blur a true determinant is >= 0.09; the floor only rescues
    # splats whose f32 covariance lost positive-definiteness to cancellation,
    # where an unguarded 1/det^2 backward overflows to inf
    det = (a * c - b * b).clamp_min(0.01)
    mid = 0.5 * (a + c)
    # the epsilon floor keeps sqrt's backward finite when the screen
    # footprint is exactly isotropic (mid^2 == det)
    radius_full = 3.0 * torch.sqrt(mid + torch.sqrt((mid * mid - det).clamp_min(1e-12)))
    radius = radius_full.clamp_max(_max_radius(cam)) * visible.to(dtype)
    # capped splats fade out at their box edge instead of at 3 sigma
    cutoff = _POWER_CUTOFF * (radius / radius_full.clamp_min(1e-12)).clamp_max(1.0) ** 2
    conic = torch.stack([c / det, -b / det, a / det], dim=1)
    return u, v, conic, radius, cutoff, x


@dataclass
class PairStructure:
    """Support set and compositing order of (gaussian, pixel) pairs.

    Static (no-grad) by construction; alphas are recomputed differentiably
    from live parameters each use, so a slightly stale structure only blurs
    the support boundary where the taper is ~zero anyway.
    """

    gauss: torch.Tensor      # (T,) gaussian index per pair, pixel-then-depth order
    pixel: torch.Tensor      # (T,) flat pixel index, sorted
    center_x: torch.Tensor   # (T,) pixel center coordinates
    center_y: torch.Tensor
    seg_start: torch.Tensor  # (T,) index of first pair in this pixel's segment
    starts: torch.Tensor     # (S,) unique segment start indices
    ends: torch.Tensor       # (S,) one-past-last pair index per segment
    out_pixels: torch.Tensor  # (S,) flat pixel id per segment


def _build_structure(positions, log_scales, rotations, cam: Camera,
                     dtype) -> PairStructure | None:
    with torch.no_grad():
        u, v, conic, radius, cutoff, depth = _project(
            positions, log_scales, rotations, cam, dtype)

        order = torch.argsort(depth, stable=True)  # front to back, ties by index
        u_s, v_s, radius_s = u[order], v[order], radius[order]
        conic_s, cutoff_s = conic[order], cutoff[order]

        w_img, h_img = cam.width, cam.height
        x0 = (u_s - radius_s).floor().long().clamp(0, w_img)
        x1 = ((u_s + radius_s).floor().long() + 1).clamp(0, w_img)
        y0 = (v_s - radius_s).floor().long().clamp(0, h_img)
        y1 = ((v_s + radius_s).floor().long() + 1).clamp(0, h_img)
        bw = (x1 - x0).clamp_min(0)
        bh = (y1 - y0).clamp_min(0)
        counts = bw * bh
        total = int(counts.sum())
        if total == 0:
            return None

        pg = torch.repeat_interleave(torch.arange(counts.numel()), counts)
        offsets = torch.cumsum(counts, 0) - counts
        k = torch.arange(total) - offsets[pg]
        dx = k % bw[pg]
        dy = torch.div(k, bw[pg], rounding_mode="floor")
        px = x0[pg] + dx
        py = y0[pg] + dy

        ddx = px.to(dtype) + 0.5 - u_s[pg]
        ddy = py.to(dtype) + 0.5 - v_s[pg]
        cn = conic_s[pg]
        power = 0.5 * (cn[:, 0] * ddx * ddx + 2.0 * cn[:, 1] * ddx * ddy
                       + cn[:, 2] * ddy * ddy).clamp_min(0.0)
        keep = power <= cutoff_s[pg]
        if not bool(keep.any()):
            return None
        pg = pg[keep]
        px = px[keep]
        py = py[keep]
        pixel = py * w_img + px

        reorder = torch.argsort(pixel, stable=True)  # per-pixel, front to back
        pixel = pixel[reorder]
        gauss = order[pg[reorder]]
        cx = (px[reorder]).to(dtype) + 0.5
        cy = (py[reorder]).to(dtype) + 0.5

        first = torch.ones_like(pixel, dtype=torch.bool)
        first[1:] = pixel[1:] != pixel[:-1]
        seg_id = torch.cumsum(first.long(), 0) - 1
        starts = torch.nonzero(first).squeeze(1)
        ends = torch.cat([starts[1:], torch.tensor([pixel.numel()])])
        return PairStructure(gauss, pixel, cx, cy, starts[seg_id], starts, ends,
                             pixel[starts])


def _pair_alphas(struct: PairStructure, positions, log_scales, rotations,
                 opacities, cam: Camera, dtype) -> torch.Tensor:
    """Differentiable per-pair alphas from live parameters."""
    u, v, conic, _radius, cutoff, _depth = _project(
        positions, log_scales, rotations, cam, dtype)
    g = struct.gauss
    ddx = struct.center_x - u[g]
    ddy = struct.center_y - v[g]
    cn = conic[g]
    # clamp_min(0) only bites when f32 cancellation breaks positive
    # semidefiniteness (near-plane splats); it prevents exp overflow
    power = 0.5 * (cn[:, 0] * ddx * ddx + 2.0 * cn[:, 1] * ddx * ddy
                   + cn[:, 2] * ddy * ddy).clamp_min(0.0)
    cut = cutoff[g]
    # C1 taper to zero at the cutoff keeps gradients finite-difference-clean
    margin = cut * (_TAPER_MARGIN / _POWER_CUTOFF)
    u_t = ((cut - power) / margin.clamp_min(1e-12)).clamp(0.0, 1.0)
    taper = u_t * u_t * (3.0 - 2.0 * u_t)
    alpha = torch.sigmoid(opacities[g]) * torch.exp(-power) * taper
    return alpha.clamp_max(_ALPHA_MAX)


def _blend_weights(struct: PairStructure, alpha: torch.Tensor) -> torch.Tensor:
    """Transmittance-times-alpha weight per pair (front-to-back blending)."""
    lg = torch.log1p(-alpha)
    cs_before = torch.cumsum(lg, 0) - lg
    return torch.exp(cs_before - cs_before[struct.seg_start]) * alpha


def _composite(struct: PairStructure, weight: torch.Tensor, colors: torch.Tensor,
               num_pixels: int) -> torch.Tensor:
    """Weighted pair contributions summed per pixel into a flat (P, C) image.

    Segment sums run channel-major: cumsum along the contiguous dimension is
    an order of magnitude faster on CPU than along a strided one.
    """
    contrib = (weight.unsqueeze(1) * colors[struct.gauss]).transpose(0, 1).contiguous()
    csum = torch.cumsum(contrib, dim=1)
    csum = torch.cat([torch.zeros(contrib.shape[0], 1, dtype=contrib.dtype), csum], dim=1)
    seg_sum = csum[:, struct.ends] - csum[:, struct.starts]  # (C, S)
    out = torch.zeros(contrib.shape[0], num_pixels, dtype=contrib.dtype)
    return out.index_copy(1, struct.out_pixels, seg_sum).transpose(0, 1)


def _render(positions, log_scales, rotations, opacities, colors, cam: Camera,
            dtype, struct: PairStructure | None = None,
            weight: torch.Tensor | None = None) -> torch.Tensor:
    """Differentiable forward render, (H, W, C).

    A precomputed `weight` (frozen-geometry fast path) skips the projection
    and alpha passes entirely; only colors stay differentiable then.
    """
    if struct is None:
        struct = _build_structure(positions, log_scales, rotations, cam, dtype)
    c = colors.shape[1]
    if struct is None:
        return torch.zeros(cam.height, cam.width, c, dtype=dtype)
    if weight is None:
        alpha = _pair_alphas(struct, positions, log_scales, rotations, opacities, cam, dtype)
        weight = _blend_weights(struct, alpha)
    flat = _composite(struct, weight, colors, cam.height * cam.width)
    return flat.reshape(cam.height, cam.width, c)


def _cloud_tensors(cloud: GaussianCloud, dtype):
    return (
        torch.as_tensor(cloud.positions, dtype=dtype),
        torch.as_tensor(cloud.log_scales, dtype=dtype),
        torch.as_tensor(cloud.rotations, dtype=dtype),
        torch.as_tensor(cloud.opacities, dtype=dtype),
    )


def rasterize_colors(cloud: GaussianCloud, cam: Camera, colors: np.ndarray) -> np.ndarray:
    """Inference-path rasterization in float64; returns (H, W, C) numpy."""
    if cam.kind != "perspective":
        raise ValueError("splat rasterization requires a perspective camera")
    with torch.no_grad():
        out = _render(*_cloud_tensors(cloud, torch.float64),
                      torch.as_tensor(colors, dtype=torch.float64), cam, torch.float64)
    return out.numpy()


def compositing_weights(cloud: GaussianCloud, cam: Camera):
    """(pixel_ids, gaussian_ids, blend_weights) triplets for a frozen view."""
    if cam.kind != "perspective":
        raise ValueError("splat rasterization requires a perspective camera")
    with torch.no_grad():
        pos, ls, rot, op = _cloud_tensors(cloud, torch.float64)
        struct = _build_structure(pos, ls, rot, cam, torch.float64)
        if struct is None:
            empty = np.zeros(0)
            return empty.astype(np.int64), empty.astype(np.int64), empty
        alpha = _pair_alphas(struct, pos, ls, rot, op, cam, torch.float64)
        weight = _blend_weights(struct, alpha)
    return struct.pixel.numpy(), struct.gauss.numpy(), weight.numpy()


# ---------------------------------------------------------------------------
# losses


def _gauss_kernel(size: int, sigma: float, dtype) -> torch.Tensor:
    x = torch.arange(size, dtype=dtype) - size // 2
    g = torch.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


_BLUR_CACHE: dict = {}


def _blur_matrix(n: int, size: int, sigma: float, dtype) -> torch.Tensor:
    """Banded 1D correlation matrix with zero padding at the edges.

    Blurring as a matmul (instead of conv2d) keeps the backward pass on the
    fast BLAS path; CPU conv2d backward is an order of magnitude slower.
    """
    key = (n, size, sigma, dtype)
    if key not in _BLUR_CACHE:
        k = _gauss_kernel(size, sigma, dtype)
        mat = torch.zeros(n, n, dtype=dtype)
        half = size // 2
        for offset in range(-half, half + 1):
            diag = torch.full((n - abs(offset),), float(k[offset + half]), dtype=dtype)
            mat += torch.diag(diag, offset)
        _BLUR_CACHE[key] = mat
    return _BLUR_CACHE[key]


def ssim_torch(a: torch.Tensor, b: torch.Tensor, peak: float = 1.0,
               size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    """Differentiable mean SSIM per map on (..., H, W) batches (zero padding)."""
    batched = a.dim() == 3
    if not batched:
        a = a.unsqueeze(0)
        b = b.unsqueeze(0)
    h, w = a.shape[-2], a.shape[-1]
    row_blur = _blur_matrix(h, size, sigma, a.dtype)
    col_blur = _blur_matrix(w, size, sigma, a.dtype).T
    stacked = torch.stack([a, b, a * a, b * b, a * b], dim=1)  # (B, 5, H, W)
    flat = row_blur @ stacked @ col_blur
    mu_a, mu_b, raw_aa, raw_bb, raw_ab = flat.unbind(dim=1)
    var_a = raw_aa - mu_a * mu_a
    var_b = raw_bb - mu_b * mu_b
    cov = raw_ab - mu_a * mu_b
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    per_map = ssim_map.mean(dim=(-2, -1))
    return per_map if batched else per_map.squeeze(0)


def dssim_torch(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (1.0 - ssim_torch(a, b)) / 2.0


def _lum(img: torch.Tensor) -> torch.Tensor:
    return img.mean(dim=-1)


def tone_curve_torch(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    return ((x + beta).clamp_min(1e-8) ** (1.0 / gamma)).clamp(0.0, 1.0)


def _olat_term(renders: torch.Tensor, targets: torch.Tensor, lambda_dssim: float) -> torch.Tensor:
    """renders/targets: (M, H, W, 3). Mean over lights of L1 + lambda * D-SSIM."""
    m = renders.shape[0]
    l1 = (renders - targets).abs().mean(dim=(1, 2, 3))
    terms = l1.sum()
    if lambda_dssim > 0.0:
        terms = terms + lambda_dssim * dssim_torch(_lum(renders), _lum(targets)).sum()
    return terms / m


def knn_indices(positions: np.ndarray, k: int) -> np.ndarray:
    """Exact K nearest neighbors by position (self excluded), (N, K) indices."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[0] <= k:
        raise ValueError(f"need more than k={k} gaussians for KNN smoothness")
    _, idx = cKDTree(positions).query(positions, k=k + 1)
    return idx[:, 1:]


def _smooth_term(coeffs_flat: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    diff = coeffs_flat.unsqueeze(1) - coeffs_flat[idx]
    return (diff * diff).sum(dim=-1).mean()


# ---------------------------------------------------------------------------
# numpy-facing loss / gradient surface


class _TorchCloud:
    """Leaf tensors mirroring a GaussianCloud, for loss/gradient evaluation."""

    FIELDS = ("positions", "log_scales", "rotations", "opacities", "light_raw")

    def __init__(self, cloud: GaussianCloud, dtype=torch.float64, requires_grad=False):
        for name in self.FIELDS:
            t = torch.as_tensor(getattr(cloud, name), dtype=dtype).clone()
            t.requires_grad_(requires_grad)
            setattr(self, name, t)
        self.dtype = dtype

    @property
    def coeffs(self) -> torch.Tensor:
        return F.softplus(self.light_raw)

    def geometry(self):
        return self.positions, self.log_scales, self.rotations, self.opacities

    def tensors(self):
        return [getattr(self, name) for name in self.FIELDS]


def _targets_tensor(view_targets, dtype) -> torch.Tensor:
    imgs = [t.data if isinstance(t, HdrImage) else np.asarray(t) for t in view_targets]
    return torch.as_tensor(np.stack(imgs), dtype=dtype)


def loss_olat(cloud: GaussianCloud, cams: list[Camera], targets,
              lambda_dssim: float = 0.2) -> float:
    """Mean per-light photometric loss over the given views.

    targets[v][m] is the ground-truth image of light slot m in view v.
    """
    tc = _TorchCloud(cloud)
    if any(len(t) != cloud.num_slots for t in targets):
        raise ValueError("target light count does not match cloud slots")
    total = 0.0
    with torch.no_grad():
        for cam, view_targets in zip(cams, targets):
            tt = _targets_tensor(view_targets, tc.dtype)
            if tt.shape[1:3] != (cam.height, cam.width):
                raise ValueError("target dimensions do not match the camera")
            renders = _render_slots(tc, cam)
            total += float(_olat_term(renders, tt, lambda_dssim))
    return total / len(cams)


def _render_slots(tc: _TorchCloud, cam: Camera, extra_colors: torch.Tensor | None = None,
                  struct: PairStructure | None = None,
                  weight: torch.Tensor | None = None) -> torch.Tensor:
    """Render all M slots (plus optional extra color columns) in one pass."""
    n, m = tc.light_raw.shape[0], tc.light_raw.shape[1]
    colors = tc.coeffs.reshape(n, m * 3)
    if extra_colors is not None:
        colors = torch.cat([colors, extra_colors], dim=1)
    img = _render(*tc.geometry(), colors, cam, tc.dtype, struct=struct, weight=weight)
    out = img.reshape(cam.height, cam.width, -1, 3).permute(2, 0, 1, 3)
    return out


def loss_comp(cloud: GaussianCloud, cams: list[Camera], originals: list[LdrImage],
              state: RemixState, curve: ToneCurve) -> float:
    """L1 between the tonemapped weighted recombination and the original views."""
    tc = _TorchCloud(cloud)
    w = torch.as_tensor(state.weights, dtype=tc.dtype)
    gamma = torch.as_tensor(curve.gamma, dtype=tc.dtype)
    beta = torch.as_tensor(curve.beta, dtype=tc.dtype)
    total = 0.0
    with torch.no_grad():
        for cam, orig in zip(cams, originals):
            comp_colors = (tc.coeffs * w).sum(dim=1)
            img = _render(*tc.geometry(), comp_colors, cam, tc.dtype)
            mapped = tone_curve_torch(img, gamma, beta)
            total += float((mapped - torch.as_tensor(orig.data, dtype=tc.dtype)).abs().mean())
    return total / len(cams)


def loss_smooth(cloud: GaussianCloud, k: int = 8) -> float:
    """KNN coefficient smoothness, (1/NK) sum of squared neighbor differences."""
    idx = torch.as_tensor(knn_indices(cloud.positions, k))
    tc = _TorchCloud(cloud)
    with torch.no_grad():
        return float(_smooth_term(tc.coeffs.reshape(cloud.count, -1), idx))


def _total_loss(tc: _TorchCloud, cams, targets_t, originals_t, w, gamma, beta,
                cfg: FitConfig, knn_idx: torch.Tensor | None,
                struct_cache: list[PairStructure | None] | None = None,
                weight_cache: list[torch.Tensor | None] | None = None,
                view_indices=None):
    """Weighted sum of the three losses over the chosen views (torch scalar)."""
    views = range(len(cams)) if view_indices is None else view_indices
    olat = torch.zeros((), dtype=tc.dtype)
    comp = torch.zeros((), dtype=tc.dtype)
    for v in views:
        cam = cams[v]
        renders = _render_slots(tc, cam,
                                struct=None if struct_cache is None else struct_cache[v],
                                weight=None if weight_cache is None else weight_cache[v])
        olat = olat + _olat_term(renders, targets_t[v], cfg.lambda_dssim)
        # rasterization is linear in color, so the weighted recombination of
        # the per-light renders equals the single-pass composite render
        comp_render = (renders * w[:, None, None, :]).sum(dim=0)
        mapped = tone_curve_torch(comp_render, gamma, beta)
        comp = comp + (mapped - originals_t[v]).abs().mean()
    count = len(list(views))
    olat = olat / count
    comp = comp / count
    if knn_idx is not None:
        smooth = _smooth_term(tc.coeffs.reshape(tc.light_raw.shape[0], -1), knn_idx)
    else:
        smooth = torch.zeros((), dtype=tc.dtype)
    total = olat + cfg.lambda_comp * comp + cfg.lambda_smooth * smooth
    return total, olat, comp, smooth


def total_loss(cloud: GaussianCloud, cams: list[Camera], targets, originals,
               state: RemixState, curve: ToneCurve, cfg: FitConfig,
               include_smooth: bool = True) -> LossReport:
    """Forward-only loss evaluation; the finite-difference oracle calls this."""
    tc = _TorchCloud(cloud)
    targets_t = [_targets_tensor(t, tc.dtype) for t in targets]
    originals_t = [torch.as_tensor(o.data, dtype=tc.dtype) for o in originals]
    knn_idx = (torch.as_tensor(knn_indices(cloud.positions, cfg.knn_k))
               if include_smooth else None)
    with torch.no_grad():
        _, olat, comp, smooth = _total_loss(
            tc, cams, targets_t, originals_t,
            torch.as_tensor(state.weights, dtype=tc.dtype),
            torch.as_tensor(curve.gamma, dtype=tc.dtype),
            torch.as_tensor(curve.beta, dtype=tc.dtype),
            cfg, knn_idx)
    return LossReport(float(olat), float(comp), float(smooth),
                      cfg.lambda_comp, cfg.lambda_smooth if include_smooth else 0.0)


def gradients(cloud: GaussianCloud, cams: list[Camera], targets, originals,
              state: RemixState, curve: ToneCurve, cfg: FitConfig,
              include_smooth: bool = True) -> dict[str, np.ndarray]:
    """Gradients of the total loss for every trainable parameter group."""
    tc = _TorchCloud(cloud, requires_grad=True)
    w = torch.as_tensor(state.weights, dtype=tc.dtype).requires_grad_(True)
    gamma = torch.as_tensor(curve.gamma, dtype=tc.dtype).requires_grad_(True)
    beta = torch.as_tensor(curve.beta, dtype=tc.dtype).requires_grad_(True)
    targets_t = [_targets_tensor(t, tc.dtype) for t in targets]
    originals_t = [torch.as_tensor(o.data, dtype=tc.dtype) for o in originals]
    knn_idx = (torch.as_tensor(knn_indices(cloud.positions, cfg.knn_k))
               if include_smooth else None)
    total, *_ = _total_loss(tc, cams, targets_t, originals_t, w, gamma, beta, cfg, knn_idx)
    leaves = tc.tensors() + [w, gamma, beta]
    grads = torch.autograd.grad(total, leaves, allow_unused=True)
    names = list(_TorchCloud.FIELDS) + ["w", "gamma", "beta"]
    return {
        name: (g.detach().numpy() if g is not None else np.zeros_like(t.detach().numpy()))
        for name, t, g in zip(names, leaves, grads)
    }


# ---------------------------------------------------------------------------
# fitting


@dataclass
class FitResult:
    cloud: GaussianCloud
    w: np.ndarray
    gamma: float
    beta: float
    telemetry: list[tuple]  # (iteration, l_olat, l_comp, l_smooth, total)


def _to_cloud(tc: _TorchCloud) -> GaussianCloud:
    return GaussianCloud(*[t.detach().double().numpy().copy() for t in tc.tensors()])


class _StructCache:
    """Per-view pair structures, refreshed every cfg.struct_refresh uses.

    Between refreshes the support set lags the moving geometry by a few Adam
    steps; the value pass stays exact on that support and the taper zeroes
    the boundary, so the error is confined to pairs with ~zero weight.
    """

    def __init__(self, tc: _TorchCloud, cams: list[Camera], refresh: int):
        self.tc = tc
        self.cams = cams
        self.refresh = max(1, refresh)
        self.structs: list[PairStructure | None] = [None] * len(cams)
        self.uses = [0] * len(cams)

    def get(self, v: int) -> PairStructure | None:
        if self.structs[v] is None or self.uses[v] % self.refresh == 0:
            p, ls, r, _ = self.tc.geometry()
            self.structs[v] = _build_structure(p, ls, r, self.cams[v], self.tc.dtype)
        self.uses[v] += 1
        return self.structs[v]


def fit_stage1(cams: list[Camera], images: list[LdrImage], init_points: np.ndarray,
               init_colors: np.ndarray | None, cfg: FitConfig,
               init_normals: np.ndarray | None = None) -> GaussianCloud:
    """Fit geometry and a single base-color slot to the original views.

    No densification: the cloud keeps the initialization's splat count, which
    is expected to come from depth unprojection or another surface sampler.
    """
    if len(cams) < 2:
        raise ValueError("need at least 2 views for stage 1")
    cloud = cloud_from_points(init_points, init_colors, normals=init_normals)
    if cfg.iters_stage1 == 0:
        return cloud
    tc = _TorchCloud(cloud, dtype=torch.float32, requires_grad=True)
    opt = _optimizer(tc, cfg, frozen_geometry=False)
    targets = [torch.as_tensor(im.data, dtype=tc.dtype) for im in images]
    cache = _StructCache(tc, cams, cfg.struct_refresh)
    for it in range(cfg.iters_stage1):
        v = it % len(cams)
        _decay_position_lr(opt, cfg, it, cfg.iters_stage1)
        render = _render(*tc.geometry(), tc.coeffs[:, 0, :], cams[v], tc.dtype,
                         struct=cache.get(v))
        loss = (render - targets[v]).abs().mean()
        if cfg.lambda_dssim > 0.0:
            loss = loss + cfg.lambda_dssim * dssim_torch(_lum(render), _lum(targets[v]))
        opt.zero_grad()
        loss.backward()
        opt.step()
    return _to_cloud(tc)


def _optimizer(tc: _TorchCloud, cfg: FitConfig, frozen_geometry: bool,
               extra: list | None = None) -> torch.optim.Adam:
    groups = []
    if not frozen_geometry:
        groups += [
            {"params": [tc.positions], "lr": cfg.lr_positions, "name": "positions"},
            {"params": [tc.log_scales], "lr": cfg.lr_scales},
            {"params": [tc.rotations], "lr": cfg.lr_rotations},
            {"params": [tc.opacities], "lr": cfg.lr_opacities},
        ]
    groups.append({"params": [tc.light_raw], "lr": cfg.lr_coeffs})
    if extra:
        groups.append({"params": extra, "lr": cfg.lr_tone})
    return torch.optim.Adam(groups, eps=1e-15)


def _decay_position_lr(opt: torch.optim.Adam, cfg: FitConfig, it: int, iters: int) -> None:
    """Exponential position-lr decay over a phase (3DGS convention)."""
    if iters <= 1 or cfg.lr_positions_decay >= 1.0:
        return
    factor = cfg.lr_positions_decay ** (it / (iters - 1))
    for group in opt.param_groups:
        if group.get("name") == "positions":
            group["lr"] = cfg.lr_positions * factor


def fit_stage2(cloud: GaussianCloud, cams: list[Camera], targets, originals,
               cfg: FitConfig, w_init: np.ndarray | None = None) -> FitResult:
    """Two-phase per-light coefficient fit.

    Phase A jointly refines geometry and the new per-light coefficients plus
    the recombination weights and tone curve; phase B freezes all geometric
    parameters and fits only the lighting side, applying the KNN smoothness
    term every cfg.smooth_every iterations.
    """
    num_views = len(cams)
    if num_views == 0 or len(targets) != num_views or len(originals) != num_views:
        raise ValueError("cams, targets and originals must align")
    m = len(targets[0])
    if any(len(t) != m for t in targets):
        raise ValueError("every view must provide the same light count")

    base = np.logaddexp(0.0, cloud.light_raw[:, 0, :])  # stage-1 base color
    light_raw = np.repeat(inv_softplus(np.maximum(base / m, 1e-6))[:, None, :], m, axis=1)
    cloud = GaussianCloud(cloud.positions, cloud.log_scales, cloud.rotations,
                          cloud.opacities, light_raw)

    tc = _TorchCloud(cloud, dtype=torch.float32, requires_grad=True)
    if w_init is None:
        w_init = np.ones((m, 3))
    w_raw = torch.as_tensor(inv_softplus(np.asarray(w_init, dtype=np.float64)),
                            dtype=tc.dtype).requires_grad_(True)
    gamma_raw = torch.as_tensor(inv_softplus(cfg.gamma_init), dtype=tc.dtype).requires_grad_(True)
    beta_raw = torch.as_tensor(inv_softplus(cfg.beta_init), dtype=tc.dtype).requires_grad_(True)

    targets_t = [_targets_tensor(t, tc.dtype) for t in targets]
    originals_t = [torch.as_tensor(o.data, dtype=tc.dtype) for o in originals]
    telemetry: list[tuple] = []

    def run_phase(iters: int, frozen: bool, start_iter: int):
        opt = _optimizer(tc, cfg, frozen_geometry=frozen, extra=[w_raw, gamma_raw, beta_raw])
        knn_idx = None
        if frozen:
            knn_idx = torch.as_tensor(knn_indices(tc.positions.detach().numpy(), cfg.knn_k))
            # geometry is frozen: stop tracing it and bake the blend weights
            for t in (tc.positions, tc.log_scales, tc.rotations, tc.opacities):
                t.requires_grad_(False)
        cache = _StructCache(tc, cams, cfg.struct_refresh if not frozen else 10 ** 9)
        struct_cache: list[PairStructure | None] = [None] * num_views
        weight_cache: list[torch.Tensor | None] = [None] * num_views
        for it in range(iters):
            step = start_iter + it
            v = step % num_views
            if not frozen:
                _decay_position_lr(opt, cfg, it, iters)
            struct_cache[v] = cache.get(v)
            if frozen and weight_cache[v] is None and struct_cache[v] is not None:
                with torch.no_grad():
                    alpha = _pair_alphas(struct_cache[v], *tc.geometry(), cams[v], tc.dtype)
                    weight_cache[v] = _blend_weights(struct_cache[v], alpha)
            use_smooth = frozen and (it % cfg.smooth_every == 0)
            total, olat, comp, smooth = _total_loss(
                tc, cams, targets_t, originals_t,
                F.softplus(w_raw), F.softplus(gamma_raw), F.softplus(beta_raw),
                cfg, knn_idx if use_smooth else None,
                struct_cache=struct_cache,
                weight_cache=weight_cache if frozen else None,
                view_indices=[v])
            opt.zero_grad()
            total.backward()
            opt.step()
            telemetry.append((step, float(olat.detach()), float(comp.detach()),
                              float(smooth.detach()), float(total.detach())))
        return start_iter + iters

    next_iter = run_phase(cfg.iters_joint, frozen=False, start_iter=0)
    run_phase(cfg.iters_frozen, frozen=True, start_iter=next_iter)

    return FitResult(
        cloud=_to_cloud(tc),
        w=F.softplus(w_raw).detach().double().numpy(),
        gamma=float(F.softplus(gamma_raw).detach()),
        beta=float(F.softplus(beta_raw).detach()),
        telemetry=telemetry,
    )

"""Perspective view sampling from equirectangular panoramas.

Covers equirect->perspective resampling, light-centered view selection,
depth-based co-visibility and greedy trajectory sampling. All directions use
the shared convention from camera.py.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .camera import Camera, angles_from_direction, direction_from_angles, rotation_from_angles
from .image import HdrImage


@dataclass(frozen=True)
class ViewRequest:
    """A perspective crop of a panorama: view direction plus pinhole intrinsics."""

    azimuth: float
    elevation: float
    fov: float  # degrees, horizontal
    width: int = 256
    height: int = 256

    def __post_init__(self):
        if not 20.0 < self.fov < 120.0:
            raise ValueError("fov must lie in (20, 120) degrees")
        if abs(self.elevation) > math.pi / 2:
            raise ValueError("|elevation| must not exceed pi/2")


@dataclass(frozen=True)
class CovisReport:
    overlap: float
    valid: bool

    def __post_init__(self):
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must lie in [0, 1]")


def sample_pano(data: np.ndarray, azimuth: np.ndarray, elevation: np.ndarray) -> np.ndarray:
    """Bilinear lookup in an equirect raster; wraps in azimuth, clamps at poles."""
    h, w = data.shape[:2]
    x = (np.asarray(azimuth) + math.pi) / (2.0 * math.pi) * w - 0.5
    y = (math.pi / 2.0 - np.asarray(elevation)) / math.pi * h - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    x0w = np.mod(x0, w)
    x1w = np.mod(x0 + 1, w)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    if data.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = data[y0c, x0w] * (1.0 - fx) + data[y0c, x1w] * fx
    bot = data[y1c, x0w] * (1.0 - fx) + data[y1c, x1w] * fx
    return top * (1.0 - fy) + bot * fy


def _view_directions(req: ViewRequest) -> np.ndarray:
    """World-of-the-pano directions for each output pixel of the request."""
    cam = Camera.perspective(req.fov, req.width, req.height)
    local = cam.pixel_directions()
    return local @ rotation_from_angles(req.azimuth, req.elevation).T


def equirect_to_perspective(pano: HdrImage, req: ViewRequest) -> HdrImage:
    """Resample a 2:1 panorama into a pinhole view along (azimuth, elevation)."""
    if pano.width != 2 * pano.height:
        raise ValueError("panorama must be 2:1 equirectangular")
    az, el = angles_from_direction(_view_directions(req))
    out = sample_pano(pano.data.astype(np.float64), az, el)
    return HdrImage(req.width, req.height, out.astype(np.float32))


def resample_pano_depth(depth: np.ndarray, req: ViewRequest) -> np.ndarray:
    """Perspective depth for a pano crop; valid because the crop shares the pano center."""
    az, el = angles_from_direction(_view_directions(req))
    return sample_pano(np.asarray(depth, dtype=np.float64), az, el)


def view_camera(req: ViewRequest, pano_cam: Camera) -> Camera:
    """Perspective camera realizing the request from the panorama's position."""
    return Camera.perspective(
        req.fov, req.width, req.height,
        pano_cam.pose.compose_rotation(rotation_from_angles(req.azimuth, req.elevation)),
    )


def mask_centroid_angles(mask: np.ndarray) -> tuple[float, float]:
    """Spherical centroid of set pixels in an equirect mask.

    Normalizes the summed unit directions; a near-antipodal mask (vanishing
    sum) falls back to the largest connected component's centroid.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask is empty")
    h, w = mask.shape
    rows, cols = np.nonzero(mask)
    az = -math.pi + 2.0 * math.pi * (cols + 0.5) / w
    el = math.pi / 2.0 - math.pi * (rows + 0.5) / h
    dirs = direction_from_angles(az, el)
    total = dirs.sum(axis=0)
    if np.linalg.norm(total) < 1e-6 * len(dirs):
        labels, count = ndimage.label(mask)
        sizes = ndimage.sum_labels(mask, labels, index=np.arange(1, count + 1))
        keep = labels == (1 + int(np.argmax(sizes)))
        return mask_centroid_angles(keep)
    a, e = angles_from_direction(total)
    return float(a), float(e)


def pick_light_view(light_mask_pano: np.ndarray, fov: float, jitter: float = 0.0,
                    rng: np.random.Generator | None = None,
                    width: int = 256, height: int = 256) -> ViewRequest:
    """View centered on a light mask, with jitter bounded to keep it in frustum."""
    az, el = mask_centroid_angles(light_mask_pano)
    if jitter > 0.0:
        rng = rng or np.random.default_rng(0)
        cap = 0.45 * math.radians(fov)
        j = min(jitter, cap)
        az += float(rng.uniform(-j, j))
        el += float(rng.uniform(-j, j))
    az = math.remainder(az, 2.0 * math.pi)
    el = min(max(el, -math.pi / 2), math.pi / 2)
    return ViewRequest(az, el, fov, width, height)


def covisibility(depth_a: np.ndarray, cam_a: Camera, depth_b: np.ndarray, cam_b: Camera,
                 tol: float, grid: int = 64) -> CovisReport:
    """Fraction of a's surface samples that b sees at consistent depth.

    Unprojects a subsampled grid of a's pixels to world points, projects them
    into b, and counts points inside b's frustum whose range agrees with b's
    depth within tol. Denominator is the number of valid unprojections.
    """
    depth_a = np.asarray(depth_a, dtype=np.float64)
    depth_b = np.asarray(depth_b, dtype=np.float64)
    h, w = depth_a.shape
    ys = np.linspace(0, h - 1, min(grid, h)).round().astype(int)
    xs = np.linspace(0, w - 1, min(grid, w)).round().astype(int)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    d = depth_a[gy, gx].ravel()
    valid = np.isfinite(d) & (d > 0.0)
    if not valid.any():
        return CovisReport(0.0, False)

    dirs = cam_a.pixel_directions()[gy, gx].reshape(-1, 3) @ cam_a.pose.rotation.T
    pts = cam_a.pose.position + dirs[valid] * d[valid][:, None]

    u, v, rng_b, in_frustum = cam_b.project(pts)
    agree = np.zeros(pts.shape[0], dtype=bool)
    if in_frustum.any():
        sampled = _sample_depth_at(depth_b, cam_b, u[in_frustum], v[in_frustum])
        agree[in_frustum] = np.abs(rng_b[in_frustum] - sampled) <= tol
    return CovisReport(float(agree.sum()) / float(valid.sum()), True)


def _sample_depth_at(depth: np.ndarray, cam: Camera, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = depth.shape
    x = u - 0.5
    y = np.clip(v - 0.5, 0.0, h - 1.0)
    if cam.kind == "equirect":
        x0 = np.floor(x).astype(np.int64)
        fx = x - x0
        x0w = np.mod(x0, w)
        x1w = np.mod(x0 + 1, w)
    else:
        x = np.clip(x, 0.0, w - 1.0)
        x0 = np.floor(x).astype(np.int64)
        fx = x - x0
        x0w = np.clip(x0, 0, w - 1)
        x1w = np.clip(x0 + 1, 0, w - 1)
    y0 = np.floor(y).astype(np.int64)
    fy = y - y0
    y1 = np.clip(y0 + 1, 0, h - 1)
    top = depth[y0, x0w] * (1.0 - fx) + depth[y0, x1w] * fx
    bot = depth[y1, x0w] * (1.0 - fx) + depth[y1, x1w] * fx
    return top * (1.0 - fy) + bot * fy


@dataclass(frozen=True)
class PanoFrame:
    """One equirect capture point: radiance, depth, a light mask and the camera."""

    pano: HdrImage
    depth: np.ndarray
    light_mask: np.ndarray
    camera: Camera


@dataclass(frozen=True)
class TrajectoryResult:
    views: tuple[ViewRequest, ...]
    sources: tuple[int, ...]
    coverage: float
    complete: bool


def _central_median_depth(depth: np.ndarray) -> float:
    """Median depth over the central quarter-area crop."""
    h, w = depth.shape
    return float(np.median(depth[h // 4: h - h // 4, w // 4: w - w // 4]))


def sample_trajectory(frames: list[PanoFrame], seed: int, count: int,
                      min_overlap: float = 0.0, min_clearance: float = 0.3,
                      fov: float = 70.0, width: int = 256, height: int = 256,
                      covis_tol: float | None = None, jitter: float = 0.15,
                      max_draws: int = 1000,
                      el_range: float = math.pi / 3) -> TrajectoryResult:
    """Greedy multi-view trajectory over the panorama set.

    The first view centers on a light; each later view is rejection-sampled
    (deterministically from the seed) until it overlaps the previous accepted
    view by at least min_overlap and keeps min_clearance of free space over
    its central region. Coverage is tracked on a 16x8 spherical bin grid.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if not frames:
        raise ValueError("need at least one panorama frame")
    rng = np.random.default_rng(np.uint64(seed))

    if covis_tol is None:
        diag = float(np.nanmax([np.nanmax(f.depth) for f in frames]))
        covis_tol = 0.02 * 2.0 * diag  # ~2% of room diagonal (depth spans half)

    first_src = next((i for i, f in enumerate(frames) if np.asarray(f.light_mask).any()), None)
    if first_src is None:
        raise ValueError("no frame has a nonempty light mask")
    first = pick_light_view(frames[first_src].light_mask, fov, jitter, rng, width, height)

    views = [first]
    sources = [first_src]
    prev_depth = resample_pano_depth(frames[first_src].depth, first)
    prev_cam = view_camera(first, frames[first_src].camera)
    covered = _coverage_bins(first, np.zeros((8, 16), dtype=bool))
    complete = True

    while len(views) < count:
        accepted = False
        for _ in range(max_draws):
            src = int(rng.integers(0, len(frames)))
            az = float(rng.uniform(-math.pi, math.pi))
            el = float(rng.uniform(-el_range, el_range))
            cand = ViewRequest(az, el, fov, width, height)
            depth = resample_pano_depth(frames[src].depth, cand)
            if _central_median_depth(depth) < min_clearance:
                continue
            if min_overlap > 0.0:
                cam = view_camera(cand, frames[src].camera)
                report = covisibility(depth, cam, prev_depth, prev_cam, covis_tol)
                if not report.valid or report.overlap < min_overlap:
                    continue
            else:
                cam = view_camera(cand, frames[src].camera)
            views.append(cand)
            sources.append(src)
            prev_depth, prev_cam = depth, cam
            covered = _coverage_bins(cand, covered)
            accepted = True
            break
        if not accepted:
            complete = False
            break
    return TrajectoryResult(tuple(views), tuple(sources),
                            float(covered.mean()), complete)


def _coverage_bins(req: ViewRequest, covered: np.ndarray) -> np.ndarray:
    """Mark spherical bins whose centers fall inside the view cone."""
    nel, naz = covered.shape
    az = -math.pi + 2.0 * math.pi * (np.arange(naz) + 0.5) / naz
    el = math.pi / 2.0 - math.pi * (np.arange(nel) + 0.5) / nel
    aa, ee = np.meshgrid(az, el)
    centers = direction_from_angles(aa, ee)
    forward = direction_from_angles(req.azimuth, req.elevation)
    cos_lim = math.cos(math.radians(req.fov) / 2.0)
    return covered | (centers @ forward >= cos_lim)


def trajectory_to_json(result: TrajectoryResult) -> dict:
    return {
        "schema": "luxtraj/1",
        "coverage": result.coverage,
        "complete": result.complete,
        "views": [
            {
                "source_pano_index": src,
                "azimuth": v.azimuth,
                "elevation": v.elevation,
                "fov": v.fov,
                "width": v.width,
                "height": v.height,
            }
            for v, src in zip(result.views, result.sources)
        ],
    }

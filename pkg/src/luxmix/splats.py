"""Gaussian splat cloud with per-light HDR RGB coefficients.

Each splat carries an M x 3 coefficient matrix (slot 0 = ambient) stored as a
raw parameter; the effective coefficient is softplus(raw), so radiance stays
nonnegative while the optimizer runs unconstrained. Rendering any lighting
mix is a single rasterization pass because compositing is linear in color.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import Camera
from .image import HdrImage

CLOUD_MAGIC = b"LXGS"
CLOUD_SCHEMA = "luxgauss/1"


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def inv_softplus(y: np.ndarray) -> np.ndarray:
    y = np.maximum(np.asarray(y, dtype=np.float64), 1e-8)
    return y + np.log(-np.expm1(-y))


@dataclass(frozen=True)
class GaussianCloud:
    positions: np.ndarray      # (N, 3) meters
    log_scales: np.ndarray     # (N, 3)
    rotations: np.ndarray      # (N, 4) quaternions, normalized on use
    opacities: np.ndarray      # (N,) logits
    light_raw: np.ndarray      # (N, M, 3) raw coefficients; effective = softplus

    def __post_init__(self):
        n = self.positions.shape[0]
        object.__setattr__(self, "positions", np.asarray(self.positions, np.float64).reshape(n, 3))
        object.__setattr__(self, "log_scales", np.asarray(self.log_scales, np.float64).reshape(n, 3))
        object.__setattr__(self, "rotations", np.asarray(self.rotations, np.float64).reshape(n, 4))
        object.__setattr__(self, "opacities", np.asarray(self.opacities, np.float64).reshape(n))
        raw = np.asarray(self.light_raw, np.float64)
        if raw.ndim != 3 or raw.shape[0] != n or raw.shape[2] != 3 or raw.shape[1] < 1:
            raise ValueError("light_raw must have shape (N, M>=1, 3)")
        object.__setattr__(self, "light_raw", raw)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def num_slots(self) -> int:
        return self.light_raw.shape[1]

    @property
    def light_coeffs(self) -> np.ndarray:
        """Effective nonnegative per-light RGB coefficients, (N, M, 3)."""
        return softplus(self.light_raw)


@dataclass(frozen=True)
class RemixState:
    """Per-slot RGB weights; slot 0 scales the ambient contribution."""

    weights: np.ndarray  # (M, 3)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != 3:
            raise ValueError("weights must have shape (M, 3)")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "weights", w)

    @classmethod
    def one_hot(cls, m: int, num_slots: int) -> "RemixState":
        w = np.zeros((num_slots, 3))
        w[m] = 1.0
        return cls(w)


@dataclass(frozen=True)
class FitConfig:
    iters_stage1: int = 2000
    iters_joint: int = 4000
    iters_frozen: int = 2000
    lambda_dssim: float = 0.2
    lambda_comp: float = 1.0
    lambda_smooth: float = 0.02
    knn_k: int = 8
    smooth_every: int = 100
    gamma_init: float = 2.2
    beta_init: float = 1e-3
    lr_positions: float = 2e-4
    lr_positions_decay: float = 0.01  # final/initial lr ratio over a phase
    lr_scales: float = 5e-3
    lr_rotations: float = 1e-3
    lr_opacities: float = 2e-2
    lr_coeffs: float = 2e-2
    lr_tone: float = 1e-3
    struct_refresh: int = 5  # rebuild pair support every N uses of a view
    seed: int = 0

    def __post_init__(self):
        for name in ("iters_stage1", "iters_joint", "iters_frozen"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.knn_k < 1 or self.smooth_every < 1:
            raise ValueError("knn_k and smooth_every must be positive")


@dataclass(frozen=True)
class LossReport:
    l_olat: float
    l_comp: float
    l_smooth: float
    lambda_comp: float
    lambda_smooth: float

    @property
    def total(self) -> float:
        return self.l_olat + self.lambda_comp * self.l_comp + self.lambda_smooth * self.l_smooth


def rasterize(cloud: GaussianCloud, cam: Camera, colors: np.ndarray) -> HdrImage:
    """Depth-sorted alpha compositing of the cloud with arbitrary splat colors."""
    from .fitting import rasterize_colors

    out = rasterize_colors(cloud, cam, np.asarray(colors, dtype=np.float64))
    return HdrImage(cam.width, cam.height, np.maximum(out, 0.0).astype(np.float32))


def render_light(cloud: GaussianCloud, cam: Camera, m: int) -> HdrImage:
    """Render the contribution of one light slot."""
    if not 0 <= m < cloud.num_slots:
        raise IndexError(f"light slot {m} out of range (M={cloud.num_slots})")
    return rasterize(cloud, cam, cloud.light_coeffs[:, m, :])


def render_remix(cloud: GaussianCloud, cam: Camera, state: RemixState) -> HdrImage:
    """Single-pass weighted recombination of all light slots."""
    if state.weights.shape[0] != cloud.num_slots:
        raise ValueError("remix weight count does not match cloud slots")
    colors = np.einsum("nmc,mc->nc", cloud.light_coeffs, state.weights)
    return rasterize(cloud, cam, colors)


class SplatRenderCache:
    """Frozen compositing weights for one (cloud, camera) pair.

    Geometry determines per-pixel blend weights independently of color, so a
    session rendering many weight mixes of the same view reuses this sparse
    matrix; a render is then one sparse matmul.
    """

    def __init__(self, cloud: GaussianCloud, cam: Camera):
        from scipy import sparse

        from .fitting import compositing_weights

        pixel_ids, gauss_ids, weights = compositing_weights(cloud, cam)
        self.shape = (cam.height, cam.width)
        self.matrix = sparse.csr_matrix(
            (weights, (pixel_ids, gauss_ids)),
            shape=(cam.height * cam.width, cloud.count),
        )

    def render(self, colors: np.ndarray) -> HdrImage:
        out = self.matrix @ np.asarray(colors, dtype=np.float64)
        h, w = self.shape
        return HdrImage(w, h, np.maximum(out, 0.0).reshape(h, w, 3).astype(np.float32))


def save_cloud(result_cloud: GaussianCloud, path, w: np.ndarray = None,
               gamma: float = 2.2, beta: float = 1e-3,
               light_names: list[str] | None = None) -> None:
    """Binary cloud file plus a JSON sidecar carrying the fitted mix parameters."""
    path = Path(path)
    n, m = result_cloud.count, result_cloud.num_slots
    with open(path, "wb") as f:
        f.write(CLOUD_MAGIC)
        f.write(struct.pack("<II", n, m))
        for arr in (result_cloud.positions, result_cloud.log_scales,
                    result_cloud.rotations, result_cloud.opacities, result_cloud.light_raw):
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    if w is None:
        w = np.ones((m, 3))
    sidecar = {
        "schema": CLOUD_SCHEMA,
        "w": [[float(v) for v in row] for row in np.asarray(w).reshape(m, 3)],
        "gamma": float(gamma),
        "beta": float(beta),
        "light_names": light_names or [f"slot_{i}" for i in range(m)],
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))


def load_cloud(path) -> tuple[GaussianCloud, dict]:
    path = Path(path)
    with open(path, "rb") as f:
        if f.read(4) != CLOUD_MAGIC:
            raise ValueError("not a luxgauss cloud file")
        n, m = struct.unpack("<II", f.read(8))

        def take(count):
            return np.frombuffer(f.read(count * 4), dtype="<f4").astype(np.float64)

        cloud = GaussianCloud(
            take(n * 3).reshape(n, 3),
            take(n * 3).reshape(n, 3),
            take(n * 4).reshape(n, 4),
            take(n),
            take(n * m * 3).reshape(n, m, 3),
        )
    sidecar_path = path.with_suffix(path.suffix + ".json")
    sidecar = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {
        "schema": CLOUD_SCHEMA, "w": [[1.0] * 3] * m, "gamma": 2.2, "beta": 1e-3,
        "light_names": [f"slot_{i}" for i in range(m)],
    }
    if sidecar.get("schema") != CLOUD_SCHEMA:
        raise ValueError(f"unsupported cloud schema {sidecar.get('schema')!r}")
    return cloud, sidecar


def random_cloud(rng: np.random.Generator, count: int, num_slots: int = 1,
                 center=(0.0, 0.0, 0.0), extent: float = 1.0,
                 scale_range=(0.01, 0.05)) -> GaussianCloud:
    """Randomized cloud for tests and benchmarks."""
    quats = rng.normal(size=(count, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return GaussianCloud(
        positions=np.asarray(center) + rng.uniform(-extent, extent, size=(count, 3)),
        log_scales=np.log(rng.uniform(*scale_range, size=(count, 3))),
        rotations=quats,
        opacities=rng.uniform(-1.0, 2.0, size=count),
        light_raw=inv_softplus(rng.uniform(0.05, 1.0, size=(count, num_slots, 3))),
    )


def cloud_from_points(points: np.ndarray, colors: np.ndarray | None = None,
                      opacity: float = 0.7, scale_factor: float = 0.5,
                      normals: np.ndarray | None = None,
                      thin: float = 0.15) -> GaussianCloud:
    """Initialize an M=1 cloud from surface points (scale from 3-NN spacing).

    With surface normals given, splats start as surface-aligned pancakes:
    local z rotated onto the normal and the z scale shrunk by `thin`, which
    suits the planar geometry these clouds model.
    """
    from scipy.spatial import cKDTree

    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    if n < 4:
        raise ValueError("need at least 4 points to estimate scales")
    dist, _ = cKDTree(points).query(points, k=4)
    spacing = np.maximum(dist[:, 1:].mean(axis=1), 1e-4)
    if colors is None:
        colors = np.full((n, 3), 0.5)
    log_scales = np.log(spacing * scale_factor)[:, None].repeat(3, axis=1)
    if normals is None:
        quats = np.zeros((n, 4))
        quats[:, 0] = 1.0
    else:
        quats = _quats_z_to(np.asarray(normals, dtype=np.float64).reshape(n, 3))
        log_scales[:, 2] += np.log(thin)
    logit = float(np.log(opacity / (1.0 - opacity)))
    return GaussianCloud(
        positions=points,
        log_scales=log_scales,
        rotations=quats,
        opacities=np.full(n, logit),
        light_raw=inv_softplus(np.maximum(colors, 1e-4))[:, None, :],
    )


def _quats_z_to(normals: np.ndarray) -> np.ndarray:
    """Quaternions rotating the local +z axis onto each (unit) normal."""
    n = normals / np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-12)
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(np.broadcast_to(z, n.shape), n)
    axis_norm = np.linalg.norm(axis, axis=1)
    cos_t = np.clip(n[:, 2], -1.0, 1.0)
    half = np.arccos(cos_t) / 2.0
    quats = np.zeros((n.shape[0], 4))
    quats[:, 0] = np.cos(half)
    ok = axis_norm > 1e-9
    quats[ok, 1:] = axis[ok] / axis_norm[ok, None] * np.sin(half[ok])[:, None]
    # antiparallel normals: rotate half-turn about x
    flip = (~ok) & (cos_t < 0)
    quats[flip] = [0.0, 1.0, 0.0, 0.0]
    quats[(~ok) & ~flip, 0] = 1.0
    return quats


def unproject_views(cams: list[Camera], depths: list[np.ndarray],
                    images: list[np.ndarray], stride: int = 4,
                    max_points: int | None = None,
                    rng: np.random.Generator | None = None,
                    normal_maps: list[np.ndarray] | None = None):
    """Back-project depth maps into a colored world point set.

    Returns (points, colors) or (points, colors, normals) when normal maps
    are supplied.
    """
    pts, cols, nrms = [], [], []
    for k, (cam, depth, img) in enumerate(zip(cams, depths, images)):
        dirs = cam.pixel_directions() @ cam.pose.rotation.T
        d = np.asarray(depth, dtype=np.float64)
        sub = (slice(None, None, stride), slice(None, None, stride))
        pts.append((cam.pose.position + dirs[sub] * d[sub][..., None]).reshape(-1, 3))
        cols.append(np.asarray(img, dtype=np.float64)[sub].reshape(-1, 3))
        if normal_maps is not None:
            nrms.append(np.asarray(normal_maps[k], dtype=np.float64)[sub].reshape(-1, 3))
    points = np.concatenate(pts, axis=0)
    colors = np.concatenate(cols, axis=0)
    normals = np.concatenate(nrms, axis=0) if nrms else None
    if max_points is not None and points.shape[0] > max_points:
        rng = rng or np.random.default_rng(0)
        keep = rng.choice(points.shape[0], size=max_points, replace=False)
        keep.sort()
        points, colors = points[keep], colors[keep]
        if normals is not None:
            normals = normals[keep]
    if normal_maps is not None:
        return points, colors, normals
    return points, colors

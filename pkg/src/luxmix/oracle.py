"""Analytic box-room renderer: exact direct Lambertian OLAT/full/depth/mask images.

Direct lighting only, which keeps the renderer exactly linear in light
intensity; that linearity is the ground truth every decomposition test leans
on. No RNG at render time: disk lights use a fixed stratified sample pattern
seeded by light index, so identical inputs give identical images.
"""

from __future__ import annotations

import math

import numpy as np

from .camera import Camera
from .image import HdrImage
from .scene import BoxScene, Light, WALL_KEYS
from .stack import LightMasks, LightStack, build_light_masks

_EPS = 1e-9


def _intersect_room(scene: BoxScene, origins: np.ndarray, dirs: np.ndarray):
    """Exit intersection with the room walls, for rays starting inside."""
    n = origins.shape[0]
    t_best = np.full(n, np.inf)
    wall_id = np.zeros(n, dtype=np.int64)
    for axis in range(3):
        d = dirs[:, axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hi = (scene.room.hi[axis] - origins[:, axis]) / d
            t_lo = (scene.room.lo[axis] - origins[:, axis]) / d
        t = np.where(d > 0, t_hi, np.where(d < 0, t_lo, np.inf))
        hit = (t > _EPS) & (t < t_best)
        t_best = np.where(hit, t, t_best)
        wall_id = np.where(hit, 2 * axis + (d > 0), wall_id)
    return t_best, wall_id


def _intersect_aabb(lo, hi, origins, dirs):
    """Slab test; returns (t_near, t_far) with t_near = -inf when origin inside."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    t0 = (lo - origins) * inv
    t1 = (hi - origins) * inv
    # 0/0 -> nan when a ray runs parallel inside a slab; treat as +-inf span
    t0 = np.nan_to_num(t0, nan=-np.inf)
    t1 = np.nan_to_num(t1, nan=np.inf)
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    return tmin.max(axis=-1), tmax.min(axis=-1), tmin, tmax


def _first_hit(scene: BoxScene, origins: np.ndarray, dirs: np.ndarray):
    """Nearest surface along each ray: (t, normal, albedo)."""
    n = origins.shape[0]
    t, wall_id = _intersect_room(scene, origins, dirs)
    normals = np.zeros((n, 3))
    albedo = np.zeros((n, 3))
    for w, key in enumerate(WALL_KEYS):
        sel = wall_id == w
        if not sel.any():
            continue
        axis, is_hi = divmod(w, 2)
        # wall normals point into the room
        normals[sel, axis] = -1.0 if is_hi else 1.0
        albedo[sel] = scene.wall_albedo[key]

    for ob in scene.obstacles:
        t_near, t_far, tmin, _ = _intersect_aabb(ob.box.lo, ob.box.hi, origins, dirs)
        hit = (t_near > _EPS) & (t_near <= t_far) & (t_near < t)
        if not hit.any():
            continue
        t_entry = t_near[hit]
        axis = np.argmax(tmin[hit] == t_entry[:, None], axis=1)
        sign = -np.sign(dirs[hit, axis])
        nrm = np.zeros((hit.sum(), 3))
        nrm[np.arange(len(axis)), axis] = sign
        t[hit] = t_entry
        normals[hit] = nrm
        albedo[hit] = ob.albedo
    return t, normals, albedo


def _segment_occluded(scene: BoxScene, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """True where the open segment start->end crosses an obstacle."""
    seg = ends - starts
    occ = np.zeros(starts.shape[0], dtype=bool)
    for ob in scene.obstacles:
        t_near, t_far, _, _ = _intersect_aabb(ob.box.lo, ob.box.hi, starts, seg)
        occ |= (t_near <= t_far) & (t_far > 1e-6) & (t_near < 1.0 - 1e-6) & (t_near > 1e-6)
    return occ


def _disk_samples(light: Light, index: int, count: int = 16) -> np.ndarray:
    """Fixed stratified sample points on the emitting disk, seeded by light index."""
    rng = np.random.default_rng(0xD15C0000 + index)
    side = int(math.isqrt(count))
    u = (np.arange(side)[:, None] + rng.random((side, side))) / side
    v = (np.arange(side)[None, :] + rng.random((side, side))) / side
    r = light.radius * np.sqrt(u.ravel())
    phi = 2.0 * math.pi * v.ravel()
    n = light.normal
    tangent = np.cross(n, [0.0, 0.0, 1.0])
    if np.linalg.norm(tangent) < 1e-8:
        tangent = np.cross(n, [0.0, 1.0, 0.0])
    tangent /= np.linalg.norm(tangent)
    bitangent = np.cross(n, tangent)
    offsets = r[:, None] * (np.cos(phi)[:, None] * tangent + np.sin(phi)[:, None] * bitangent)
    return light.position + offsets


def _shade_one_light(scene: BoxScene, light: Light, index: int,
                     points: np.ndarray, normals: np.ndarray, albedo: np.ndarray) -> np.ndarray:
    """Direct Lambertian contribution of a single light at the given surface samples."""
    if light.kind == "disk":
        samples = _disk_samples(light, index)
    else:
        samples = light.position[None, :]
    starts = points + normals * 1e-6
    out = np.zeros_like(points)
    for s in samples:
        to_light = s - starts
        dist_sq = np.maximum((to_light ** 2).sum(axis=1), 1e-12)
        cos_t = (to_light * normals).sum(axis=1) / np.sqrt(dist_sq)
        lit = cos_t > 0.0
        if lit.any():
            vis = ~_segment_occluded(scene, starts[lit], np.broadcast_to(s, starts[lit].shape))
            idx = np.nonzero(lit)[0][vis]
            out[idx] += (cos_t[idx] / dist_sq[idx])[:, None] * light.intensity
    out *= albedo / (math.pi * len(samples))
    return out


def _primary_hits(scene: BoxScene, cam: Camera):
    origins, dirs = cam.rays()
    o = origins.reshape(-1, 3)
    d = dirs.reshape(-1, 3)
    t, normals, albedo = _first_hit(scene, o, d)
    points = o + t[:, None] * d
    return t, points, normals, albedo


def _ambient_shading(scene: BoxScene, points, normals, albedo) -> np.ndarray:
    """Environment term plus all lights treated as ambient (non-controllable)."""
    out = albedo / math.pi * scene.ambient_env
    for i, light in enumerate(scene.lights):
        if not light.controllable:
            out = out + _shade_one_light(scene, light, i, points, normals, albedo)
    return out


def render_olat(scene: BoxScene, light_index: int, cam: Camera) -> HdrImage:
    """Image lit by exactly one light, everything else switched off."""
    if not 0 <= light_index < len(scene.lights):
        raise IndexError(f"light index {light_index} out of range")
    _, points, normals, albedo = _primary_hits(scene, cam)
    rgb = _shade_one_light(scene, scene.lights[light_index], light_index, points, normals, albedo)
    return HdrImage(cam.width, cam.height, rgb.reshape(cam.height, cam.width, 3).astype(np.float32))


def render_ambient(scene: BoxScene, cam: Camera) -> HdrImage:
    _, points, normals, albedo = _primary_hits(scene, cam)
    rgb = _ambient_shading(scene, points, normals, albedo)
    return HdrImage(cam.width, cam.height, rgb.reshape(cam.height, cam.width, 3).astype(np.float32))


def render_full(scene: BoxScene, cam: Camera) -> HdrImage:
    """All lights on plus ambient; equals ambient + sum of OLAT renders."""
    _, points, normals, albedo = _primary_hits(scene, cam)
    rgb = _ambient_shading(scene, points, normals, albedo)
    for i in scene.controllable_indices:
        rgb = rgb + _shade_one_light(scene, scene.lights[i], i, points, normals, albedo)
    return HdrImage(cam.width, cam.height, rgb.reshape(cam.height, cam.width, 3).astype(np.float32))


def render_depth(scene: BoxScene, cam: Camera) -> np.ndarray:
    """Euclidean distance to the first hit per pixel, shape (H, W)."""
    t, _, _, _ = _primary_hits(scene, cam)
    return t.reshape(cam.height, cam.width)


def render_normals(scene: BoxScene, cam: Camera) -> np.ndarray:
    """Surface normal of the first hit per pixel, shape (H, W, 3)."""
    _, _, normals, _ = _primary_hits(scene, cam)
    return normals.reshape(cam.height, cam.width, 3)


def render_light_masks(scene: BoxScene, light_index: int, cam: Camera,
                       min_area: int = 64, dilate_radius: int = 1) -> LightMasks:
    """Emissive / fixture / hull mask tiers for one light.

    Emissive pixels see the emitting geometry (disk, or a small sphere for
    point lights) in front of all scene surfaces; fixture pixels see the
    fixture bounding box. Fixtures never occlude the radiometric renders.
    """
    if not 0 <= light_index < len(scene.lights):
        raise IndexError(f"light index {light_index} out of range")
    light = scene.lights[light_index]
    origins, dirs = cam.rays()
    o = origins.reshape(-1, 3)
    d = dirs.reshape(-1, 3)
    t_scene, _, _ = _first_hit(scene, o, d)

    t_emit = _emissive_hit_t(light, o, d)
    emissive = np.isfinite(t_emit) & (t_emit < t_scene)

    t_near, t_far, _, _ = _intersect_aabb(light.fixture_bounds.lo, light.fixture_bounds.hi, o, d)
    t_fix = np.where(t_near > _EPS, t_near, np.where(t_far > _EPS, 0.0, np.inf))
    fixture = (t_near <= t_far) & np.isfinite(t_fix) & (t_fix < t_scene)

    shape = (cam.height, cam.width)
    return build_light_masks(emissive.reshape(shape), fixture.reshape(shape),
                             min_area=min_area, radius=dilate_radius)


def _emissive_hit_t(light: Light, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    if light.kind == "disk":
        denom = dirs @ light.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((light.position - origins) @ light.normal) / denom
        on_disk = np.linalg.norm(
            origins + t[:, None] * dirs - light.position, axis=1) <= light.radius
        return np.where((np.abs(denom) > 1e-12) & (t > _EPS) & on_disk, t, np.inf)
    # point light: small emissive sphere
    oc = origins - light.position
    b = (oc * dirs).sum(axis=1)
    c = (oc * oc).sum(axis=1) - light.radius ** 2
    disc = b * b - c
    t = -b - np.sqrt(np.maximum(disc, 0.0))
    return np.where((disc >= 0.0) & (t > _EPS), t, np.inf)


def render_stack(scene: BoxScene, cam: Camera) -> LightStack:
    """Ground-truth light stack for a view: ambient + one OLAT layer per
    controllable light, unit scales (intensities baked into the layers)."""
    from .stack import LightMeta

    _, points, normals, albedo = _primary_hits(scene, cam)
    shape = (cam.height, cam.width, 3)
    ambient = HdrImage(cam.width, cam.height,
                       _ambient_shading(scene, points, normals, albedo)
                       .reshape(shape).astype(np.float32))
    layers, meta = [], []
    for i in scene.controllable_indices:
        light = scene.lights[i]
        rgb = _shade_one_light(scene, light, i, points, normals, albedo)
        layers.append(HdrImage(cam.width, cam.height, rgb.reshape(shape).astype(np.float32)))
        meta.append(LightMeta(light.name, light.temperature))
    scales = tuple(np.ones(3) for _ in layers)
    return LightStack(ambient, tuple(layers), scales, tuple(meta))

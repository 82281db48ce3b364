"""Analytic box-room scene description, blackbody light colors, and the seeded generator."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import Camera, Pose, rotation_from_angles

log = logging.getLogger(__name__)

SCENE_SCHEMA = "luxscene/1"

WALL_KEYS = ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max")


@dataclass(frozen=True)
class Aabb:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
        hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
        if np.any(hi <= lo):
            raise ValueError("box must have positive extent on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def contains(self, p, tol: float = 1e-9) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= self.lo - tol) and np.all(p <= self.hi + tol))


@dataclass(frozen=True)
class Obstacle:
    box: Aabb
    albedo: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.albedo, dtype=np.float64).reshape(3)
        if np.any(a < 0) or np.any(a > 1):
            raise ValueError("albedo must lie in [0, 1]")
        object.__setattr__(self, "albedo", a)


@dataclass(frozen=True)
class Light:
    """Point or disk emitter. Fixture bounds exist only for mask rendering."""

    position: np.ndarray
    intensity: np.ndarray  # RGB radiant intensity, >= 0
    temperature: float = 6600.0
    kind: str = "point"  # "point" | "disk"
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -1.0]))
    radius: float = 0.15  # disk radius; for point lights, emissive sphere for masks
    fixture_bounds: Aabb | None = None
    controllable: bool = True
    name: str = "light"

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(3)
        inten = np.asarray(self.intensity, dtype=np.float64).reshape(3)
        if np.any(inten < 0):
            raise ValueError("light intensity must be nonnegative")
        if not (1800.0 <= self.temperature <= 10000.0):
            raise ValueError("light temperature must lie in [1800, 10000] K")
        if self.kind not in ("point", "disk"):
            raise ValueError(f"unknown light kind {self.kind!r}")
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        n = n / np.linalg.norm(n)
        fb = self.fixture_bounds
        if fb is None:
            pad = max(self.radius, 0.05) * 1.5
            fb = Aabb(pos - pad, pos + pad)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "intensity", inten)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "fixture_bounds", fb)


@dataclass(frozen=True)
class BoxScene:
    """Axis-aligned room with diffuse walls, box obstacles and up to 6 lights."""

    room: Aabb
    wall_albedo: dict  # WALL_KEYS -> RGB in [0, 1]
    obstacles: tuple[Obstacle, ...] = ()
    lights: tuple[Light, ...] = ()
    ambient_env: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if len(self.lights) > 6:
            raise ValueError("at most 6 lights supported")
        for key in WALL_KEYS:
            if key not in self.wall_albedo:
                raise ValueError(f"missing wall albedo for {key}")
        walls = {k: np.clip(np.asarray(v, dtype=np.float64).reshape(3), 0.0, 1.0)
                 for k, v in self.wall_albedo.items()}
        for ob in self.obstacles:
            if not (self.room.contains(ob.box.lo) and self.room.contains(ob.box.hi)):
                raise ValueError("obstacles must lie inside the room")
        for lt in self.lights:
            if not self.room.contains(lt.position):
                raise ValueError("lights must lie inside the room")
        env = np.asarray(self.ambient_env, dtype=np.float64).reshape(3)
        if np.any(env < 0):
            raise ValueError("ambient environment term must be nonnegative")
        object.__setattr__(self, "wall_albedo", walls)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "lights", tuple(self.lights))
        object.__setattr__(self, "ambient_env", env)

    @property
    def controllable_indices(self) -> list[int]:
        return [i for i, lt in enumerate(self.lights) if lt.controllable]


def temperature_to_rgb(kelvin: float) -> np.ndarray:
    """Blackbody color for a correlated color temperature, max channel = 1.

    Log/power fit of the Planckian locus with its white point at 6600 K;
    out-of-range inputs are clamped (and logged).
    """
    if not (1000.0 <= kelvin <= 12000.0):
        log.warning("temperature %.1f K outside [1000, 12000], clamping", kelvin)
        kelvin = min(max(kelvin, 1000.0), 12000.0)
    t = kelvin / 100.0
    if t <= 66.0:
        r = 255.0
        g = 99.4708025861 * math.log(t) - 161.1195681661
    else:
        r = 329.698727446 * (t - 60.0) ** -0.1332047592
        g = 288.1221695283 * (t - 60.0) ** -0.0755148492
    if t >= 66.0:
        b = 255.0
    elif t <= 19.0:
        b = 0.0
    else:
        b = 138.5177312231 * math.log(t - 10.0) - 305.0447927307
    rgb = np.clip(np.array([r, g, b]) / 255.0, 0.0, 1.0)
    return rgb / rgb.max()


def scene_to_json(scene: BoxScene, cameras: list[Camera] | None = None) -> dict:
    return {
        "schema": SCENE_SCHEMA,
        "room": {"lo": list(scene.room.lo), "hi": list(scene.room.hi)},
        "wall_albedo": {k: list(v) for k, v in scene.wall_albedo.items()},
        "obstacles": [
            {"lo": list(o.box.lo), "hi": list(o.box.hi), "albedo": list(o.albedo)}
            for o in scene.obstacles
        ],
        "lights": [
            {
                "name": lt.name,
                "kind": lt.kind,
                "position": list(lt.position),
                "intensity": list(lt.intensity),
                "temperature": lt.temperature,
                "normal": list(lt.normal),
                "radius": lt.radius,
                "fixture_lo": list(lt.fixture_bounds.lo),
                "fixture_hi": list(lt.fixture_bounds.hi),
                "controllable": lt.controllable,
            }
            for lt in scene.lights
        ],
        "ambient_env": list(scene.ambient_env),
        "cameras": [cam.to_json() for cam in (cameras or [])],
    }


def scene_from_json(obj: dict) -> tuple[BoxScene, list[Camera]]:
    if obj.get("schema") != SCENE_SCHEMA:
        raise ValueError(f"unsupported scene schema: {obj.get('schema')!r}")
    scene = BoxScene(
        room=Aabb(obj["room"]["lo"], obj["room"]["hi"]),
        wall_albedo=obj["wall_albedo"],
        obstacles=tuple(
            Obstacle(Aabb(o["lo"], o["hi"]), o["albedo"]) for o in obj["obstacles"]
        ),
        lights=tuple(
            Light(
                position=l["position"],
                intensity=l["intensity"],
                temperature=l["temperature"],
                kind=l["kind"],
                normal=l["normal"],
                radius=l["radius"],
                fixture_bounds=Aabb(l["fixture_lo"], l["fixture_hi"]),
                controllable=l["controllable"],
                name=l["name"],
            )
            for l in obj["lights"]
        ),
        ambient_env=obj["ambient_env"],
    )
    cameras = [Camera.from_json(c) for c in obj.get("cameras", [])]
    return scene, cameras


def save_scene(scene: BoxScene, path, cameras: list[Camera] | None = None) -> None:
    Path(path).write_text(json.dumps(scene_to_json(scene, cameras), indent=2, sort_keys=True))


def load_scene(path) -> tuple[BoxScene, list[Camera]]:
    return scene_from_json(json.loads(Path(path).read_text()))


def generate_scene(seed: int, num_lights: int | None = None,
                   num_cameras: int = 4) -> tuple[BoxScene, list[Camera]]:
    """Deterministic procedural room: walls, a few obstacles, 2-6 archetype lights.

    Identical seeds produce identical scenes (and identical JSON bytes).
    """
    rng = np.random.default_rng(np.uint64(seed))
    size = rng.uniform([3.5, 3.0, 2.5], [6.0, 5.0, 3.2])
    room = Aabb(np.zeros(3), size)

    wall_albedo = {}
    base = rng.uniform(0.35, 0.75, size=3)
    for key in WALL_KEYS:
        tint = np.clip(base + rng.uniform(-0.12, 0.12, size=3), 0.05, 0.95)
        if key == "z_min":  # floor darker
            tint *= rng.uniform(0.5, 0.8)
        wall_albedo[key] = tint

    obstacles = []
    tables = []
    for _ in range(int(rng.integers(1, 4))):
        footprint = rng.uniform([0.5, 0.5, 0.4], [1.4, 1.4, 1.0])
        lo_xy = rng.uniform([0.3, 0.3], size[:2] - footprint[:2] - 0.3)
        lo = np.array([lo_xy[0], lo_xy[1], 0.0])
        box = Aabb(lo, lo + footprint)
        obstacles.append(Obstacle(box, rng.uniform(0.2, 0.8, size=3)))
        tables.append(box)

    if num_lights is None:
        num_lights = int(rng.integers(2, 7))
    if not 2 <= num_lights <= 6:
        raise ValueError("light count must lie in [2, 6]")

    lights = []
    for i in range(num_lights):
        archetype = ["ceiling", "wall", "table"][int(rng.integers(0, 3))]
        kelvin = float(rng.uniform(2200.0, 7500.0))
        color = temperature_to_rgb(kelvin)
        power = float(rng.uniform(1.5, 6.0))
        if archetype == "ceiling":
            pos = np.array([
                rng.uniform(0.8, size[0] - 0.8),
                rng.uniform(0.8, size[1] - 0.8),
                size[2] - rng.uniform(0.05, 0.25),
            ])
            kind, normal, radius = "disk", np.array([0.0, 0.0, -1.0]), float(rng.uniform(0.08, 0.2))
        elif archetype == "wall":
            axis = int(rng.integers(0, 2))
            side = int(rng.integers(0, 2))
            pos = np.array([
                rng.uniform(0.6, size[0] - 0.6),
                rng.uniform(0.6, size[1] - 0.6),
                rng.uniform(1.4, size[2] - 0.4),
            ])
            pos[axis] = 0.25 if side == 0 else size[axis] - 0.25
            normal = np.zeros(3)
            normal[axis] = 1.0 if side == 0 else -1.0
            kind, radius = "point", 0.06
        else:
            if tables and rng.random() < 0.7:
                table = tables[int(rng.integers(0, len(tables)))]
                pos = np.array([
                    rng.uniform(table.lo[0] + 0.1, table.hi[0] - 0.1),
                    rng.uniform(table.lo[1] + 0.1, table.hi[1] - 0.1),
                    table.hi[2] + rng.uniform(0.25, 0.5),
                ])
            else:
                pos = np.array([
                    rng.uniform(0.5, size[0] - 0.5),
                    rng.uniform(0.5, size[1] - 0.5),
                    rng.uniform(0.5, 1.4),
                ])
            kind, normal, radius = "point", np.array([0.0, 0.0, 1.0]), 0.06
        lights.append(
            Light(
                position=pos,
                intensity=color * power,
                temperature=kelvin,
                kind=kind,
                normal=normal,
                radius=radius,
                controllable=True,
                name=f"{archetype}_{i}",
            )
        )

    scene = BoxScene(
        room=room,
        wall_albedo=wall_albedo,
        obstacles=tuple(obstacles),
        lights=tuple(lights),
        ambient_env=rng.uniform(0.01, 0.08, size=3),
    )

    cameras = []
    for _ in range(num_cameras):
        for _attempt in range(100):
            pos = np.array([
                rng.uniform(0.6, size[0] - 0.6),
                rng.uniform(0.6, size[1] - 0.6),
                rng.uniform(1.4, 1.8),
            ])
            if all(not ob.box.contains(pos, tol=0.3) for ob in obstacles):
                break
        yaw = float(rng.uniform(-math.pi, math.pi))
        cameras.append(Camera.equirect(512, 256, Pose(rotation_from_angles(yaw, 0.0), pos)))
    return scene, cameras

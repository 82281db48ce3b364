"""Camera models and the one shared direction convention.

Camera space: +x forward, +y left, +z up (right-handed). Azimuth grows
left-to-right across an equirectangular image over [-pi, pi); elevation grows
bottom-to-top over [-pi/2, pi/2]. Pixel centers sit at half-integer
coordinates. Every module that touches directions goes through this file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Pose",
    "Camera",
    "direction_from_angles",
    "angles_from_direction",
    "rotation_from_angles",
]


def direction_from_angles(azimuth, elevation) -> np.ndarray:
    """Unit direction(s) for azimuth/elevation in radians; broadcasts."""
    az = np.asarray(azimuth, dtype=np.float64)
    el = np.asarray(elevation, dtype=np.float64)
    ce = np.cos(el)
    return np.stack([ce * np.cos(az), -ce * np.sin(az), np.sin(el)], axis=-1)


def angles_from_direction(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of direction_from_angles; accepts (..., 3), need not be unit."""
    d = np.asarray(d, dtype=np.float64)
    r = np.linalg.norm(d, axis=-1)
    az = np.arctan2(-d[..., 1], d[..., 0])
    el = np.arcsin(np.clip(d[..., 2] / np.maximum(r, 1e-300), -1.0, 1.0))
    return az, el


def _rot_z(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_from_angles(azimuth: float, elevation: float) -> np.ndarray:
    """Rotation taking camera space into a frame looking along (azimuth, elevation)."""
    return _rot_z(-azimuth) @ _rot_y(-elevation)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: world_point = rotation @ cam_point + position."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.position, dtype=np.float64).reshape(3)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise ValueError("rotation must be orthonormal")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "position", t)

    def to_world(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts) @ self.rotation.T + self.position

    def to_camera(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts) - self.position) @ self.rotation

    def compose_rotation(self, local: np.ndarray) -> "Pose":
        return Pose(self.rotation @ local, self.position)

    def to_json(self) -> dict:
        return {
            "rotation": [float(v) for v in self.rotation.ravel()],
            "position": [float(v) for v in self.position],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Pose":
        return cls(np.asarray(obj["rotation"]).reshape(3, 3), obj["position"])


@dataclass(frozen=True)
class Camera:
    """Perspective pinhole or equirectangular camera with a rigid pose."""

    kind: str  # "perspective" | "equirect"
    width: int
    height: int
    fov_deg: float = 0.0  # horizontal; perspective only
    pose: Pose = field(default_factory=Pose)

    def __post_init__(self):
        if self.kind == "perspective":
            if not (0.0 < self.fov_deg < 180.0):
                raise ValueError("perspective fov must lie in (0, 180) degrees")
        elif self.kind == "equirect":
            if self.width != 2 * self.height:
                raise ValueError("equirect cameras require width = 2 * height")
        else:
            raise ValueError(f"unknown camera kind {self.kind!r}")

    @classmethod
    def perspective(cls, fov_deg: float, width: int, height: int, pose: Pose = None) -> "Camera":
        return cls("perspective", width, height, fov_deg, pose or Pose())

    @classmethod
    def equirect(cls, width: int, height: int, pose: Pose = None) -> "Camera":
        return cls("equirect", width, height, 0.0, pose or Pose())

    @property
    def focal(self) -> float:
        return 0.5 * self.width / math.tan(math.radians(self.fov_deg) / 2.0)

    def pixel_directions(self) -> np.ndarray:
        """Camera-space unit direction for every pixel center, shape (H, W, 3)."""
        if self.kind == "perspective":
            f = self.focal
            u = (np.arange(self.width) + 0.5) - self.width / 2.0
            v = (np.arange(self.height) + 0.5) - self.height / 2.0
            uu, vv = np.meshgrid(u, v)
            d = np.stack([np.ones_like(uu), -uu / f, -vv / f], axis=-1)
            return d / np.linalg.norm(d, axis=-1, keepdims=True)
        az = -math.pi + 2.0 * math.pi * (np.arange(self.width) + 0.5) / self.width
        el = math.pi / 2.0 - math.pi * (np.arange(self.height) + 0.5) / self.height
        aa, ee = np.meshgrid(az, el)
        return direction_from_angles(aa, ee)

    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        """World-space (origins, directions), each (H, W, 3)."""
        d = self.pixel_directions() @ self.pose.rotation.T
        o = np.broadcast_to(self.pose.position, d.shape)
        return o, d

    def project(
        self, pts_world: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """World points -> (u, v) pixel coords, range distance, in-frustum mask.

        For equirect cameras every point with positive range is in frustum.
        """
        p = self.pose.to_camera(np.asarray(pts_world, dtype=np.float64))
        rng = np.linalg.norm(p, axis=-1)
        if self.kind == "perspective":
            f = self.focal
            with np.errstate(divide="ignore", invalid="ignore"):
                u = f * (-p[..., 1] / p[..., 0]) + self.width / 2.0
                v = f * (-p[..., 2] / p[..., 0]) + self.height / 2.0
            ok = (
                (p[..., 0] > 1e-9)
                & (u >= 0.0) & (u <= self.width)
                & (v >= 0.0) & (v <= self.height)
            )
            return u, v, rng, ok
        az, el = angles_from_direction(p)
        u = (az + math.pi) / (2.0 * math.pi) * self.width
        v = (math.pi / 2.0 - el) / math.pi * self.height
        return u, v, rng, rng > 1e-12

    def to_json(self) -> dict:
        obj = {"kind": self.kind, "width": self.width, "height": self.height,
               "pose": self.pose.to_json()}
        if self.kind == "perspective":
            obj["fov_deg"] = self.fov_deg
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "Camera":
        return cls(obj["kind"], obj["width"], obj["height"], obj.get("fov_deg", 0.0),
                   Pose.from_json(obj["pose"]))

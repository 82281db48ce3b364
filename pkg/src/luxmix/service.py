"""HTTP render service: session management and remix rendering for the web UI.

Sessions live in memory; each holds either a light stack (fixed view) or a
Gaussian cloud (free camera). Renders are pure functions of the session
snapshot, so identical requests produce identical PNG bytes. Cloud sessions
cache per-camera compositing weights, which makes repeated renders of the
same viewpoint a single sparse matmul.
"""

from __future__ import annotations

import json
import os
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from . import formats
from .camera import Camera, Pose, direction_from_angles, rotation_from_angles
from .image import HdrImage, ToneCurve, tonemap_agx, tonemap_curve
from .scene import temperature_to_rgb
from .splats import GaussianCloud, SplatRenderCache, load_cloud
from .stack import LightStack, RemixWeights, load_stack, remix

DEFAULT_CURVE = ToneCurve(2.2, 1e-3)


class CreateSessionRequest(BaseModel):
    kind: str  # "stack" | "cloud"
    path: str
    id: str | None = None
    display: str = "curve"  # "curve" | "agx"


class WeightsPatch(BaseModel):
    weights: list[list[float]]


class OrbitCamera(BaseModel):
    azimuth: float = 0.0
    elevation: float = 0.0
    radius: float | None = None
    fov: float = 70.0
    width: int = 512
    height: int = 512


class RenderRequest(BaseModel):
    weights: list[list[float]] | None = None
    camera: OrbitCamera | None = None
    encoding: str = "png"  # "png" | "lxhd"


@dataclass
class Session:
    id: str
    kind: str
    display: str
    weights: np.ndarray  # (num_slots, 3); slot 0 = ambient
    light_names: list[str]
    kelvins: list[float]
    default_scales: np.ndarray
    stack: LightStack | None = None
    cloud: GaussianCloud | None = None
    centroid: np.ndarray | None = None
    extent: float = 1.0
    lock: threading.Lock = field(default_factory=threading.Lock)
    render_cache: dict = field(default_factory=dict)

    @property
    def num_slots(self) -> int:
        return self.weights.shape[0]


def _load_session(req: CreateSessionRequest, sid: str) -> Session:
    if req.display not in ("curve", "agx"):
        raise HTTPException(422, f"unknown display transform {req.display!r}")
    path = Path(req.path)
    if not path.exists():
        raise HTTPException(422, f"no such file: {path}")
    if req.kind == "stack":
        stack, _masks = load_stack(path)
        weights = np.vstack([np.ones((1, 3))] + [s.reshape(1, 3) for s in stack.scales])
        return Session(
            id=sid, kind="stack", display=req.display, weights=weights,
            light_names=["ambient"] + [m.name for m in stack.light_meta],
            kelvins=[6600.0] + [m.kelvin for m in stack.light_meta],
            default_scales=weights.copy(), stack=stack,
        )
    if req.kind == "cloud":
        cloud, sidecar = load_cloud(path)
        weights = np.asarray(sidecar["w"], dtype=np.float64)
        lo = cloud.positions.min(axis=0)
        hi = cloud.positions.max(axis=0)
        return Session(
            id=sid, kind="cloud", display=req.display, weights=weights,
            light_names=sidecar["light_names"],
            kelvins=[6600.0] * cloud.num_slots,
            default_scales=weights.copy(), cloud=cloud,
            centroid=0.5 * (lo + hi), extent=float(np.linalg.norm(hi - lo)),
        )
    raise HTTPException(422, f"unknown session kind {req.kind!r}")


def _check_weights(session: Session, weights: list[list[float]]) -> np.ndarray:
    arr = np.asarray(weights, dtype=np.float64)
    if arr.shape != (session.num_slots, 3):
        raise HTTPException(
            422, f"expected {session.num_slots} RGB weight rows, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise HTTPException(422, "weights must be finite and nonnegative")
    return arr


def _display(session: Session, img: HdrImage):
    if session.display == "agx":
        return tonemap_agx(img)
    return tonemap_curve(img, DEFAULT_CURVE)


def _orbit_camera(session: Session, orbit: OrbitCamera) -> Camera:
    radius = orbit.radius if orbit.radius is not None else 0.9 * session.extent
    forward = direction_from_angles(orbit.azimuth, orbit.elevation)
    position = session.centroid - forward * radius
    pose = Pose(rotation_from_angles(orbit.azimuth, orbit.elevation), position)
    return Camera.perspective(orbit.fov, orbit.width, orbit.height, pose)


def _render_linear(session: Session, weights: np.ndarray,
                   orbit: OrbitCamera | None) -> HdrImage:
    if session.kind == "stack":
        w = RemixWeights(weights=tuple(weights[1:]), ambient_gain=weights[0])
        return remix(session.stack, w)
    cam = _orbit_camera(session, orbit or OrbitCamera())
    key = (cam.width, cam.height, round(cam.fov_deg, 6),
           tuple(np.round(cam.pose.position, 9)),
           tuple(np.round(cam.pose.rotation.ravel(), 9)))
    cache = session.render_cache.get(key)
    if cache is None:
        cache = SplatRenderCache(session.cloud, cam)
        if len(session.render_cache) > 16:  # orbit sweeps: keep it bounded
            session.render_cache.clear()
        session.render_cache[key] = cache
    colors = np.einsum("nmc,mc->nc", session.cloud.light_coeffs, weights)
    return cache.render(colors)


def create_app() -> FastAPI:
    app = FastAPI(title="luxmix render service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"])
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()
    app.state.sessions = sessions

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "sessions": len(sessions)}

    @app.get("/kelvin-table")
    def kelvin_table():
        kelvins = list(range(1800, 10001, 50))
        return {
            "kelvin": kelvins,
            "rgb": [[float(v) for v in temperature_to_rgb(k)] for k in kelvins],
        }

    @app.post("/sessions", status_code=201)
    def create_session(req: CreateSessionRequest):
        with registry_lock:
            sid = req.id or secrets.token_hex(8)
            if sid in sessions:
                raise HTTPException(409, f"session {sid!r} already exists")
            sessions[sid] = None  # reserve while loading
        try:
            session = _load_session(req, sid)
        except HTTPException:
            with registry_lock:
                sessions.pop(sid, None)
            raise
        with registry_lock:
            sessions[sid] = session
        return {
            "id": sid,
            "kind": session.kind,
            "num_slots": session.num_slots,
            "lights": _light_listing(session),
        }

    def _get(sid: str) -> Session:
        session = sessions.get(sid)
        if session is None:
            raise HTTPException(404, f"unknown session {sid!r}")
        return session

    def _light_listing(session: Session):
        return [
            {
                "index": i,
                "name": session.light_names[i],
                "kelvin": session.kelvins[i],
                "default_scale": [float(v) for v in session.default_scales[i]],
                "current": [float(v) for v in session.weights[i]],
            }
            for i in range(session.num_slots)
        ]

    @app.get("/sessions/{sid}/lights")
    def lights(sid: str):
        return {"lights": _light_listing(_get(sid))}

    @app.patch("/sessions/{sid}/weights")
    def patch_weights(sid: str, patch: WeightsPatch):
        session = _get(sid)
        arr = _check_weights(session, patch.weights)
        with session.lock:
            session.weights = arr
        return {"ok": True}

    @app.post("/sessions/{sid}/render")
    def render(sid: str, req: RenderRequest):
        session = _get(sid)
        t0 = time.perf_counter()
        with session.lock:
            weights = (_check_weights(session, req.weights)
                       if req.weights is not None else session.weights.copy())
            linear = _render_linear(session, weights, req.camera)
            if req.encoding == "lxhd":
                import io
                import struct

                buf = io.BytesIO()
                buf.write(formats.LXHD_MAGIC)
                buf.write(struct.pack("<II", linear.width, linear.height))
                buf.write(np.ascontiguousarray(linear.data, dtype="<f4").tobytes())
                payload, media = buf.getvalue(), "application/octet-stream"
            else:
                payload, media = _encode_png(_display(session, linear)), "image/png"
        millis = (time.perf_counter() - t0) * 1000.0
        return Response(content=payload, media_type=media,
                        headers={"X-Render-Millis": f"{millis:.3f}"})

    @app.get("/sessions/{sid}/original")
    def original(sid: str):
        session = _get(sid)
        with session.lock:
            linear = _render_linear(session, session.default_scales, None)
            payload = _encode_png(_display(session, linear))
        return Response(content=payload, media_type="image/png")

    ui_dir = os.environ.get("LUXMIX_UI_DIR", _default_ui_dir())
    if ui_dir and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app


def _encode_png(ldr) -> bytes:
    return formats.ldr_to_png_bytes(ldr, compress_level=1)


def _default_ui_dir() -> str | None:
    candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    return str(candidate) if candidate.is_dir() else None


def run(host: str = "127.0.0.1", port: int | None = None) -> None:
    import uvicorn

    if port is None:
        port = int(os.environ.get("LUXMIX_PORT", "8090"))
    uvicorn.run(create_app(), host=host, port=port)

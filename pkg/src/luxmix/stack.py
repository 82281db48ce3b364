"""Light stack data model: ambient + OLAT layers with per-light RGB scales.

All arithmetic is linear in radiance, which is what makes decomposition,
remixing and one-light-off edits exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import formats
from .image import HdrImage, LdrImage, ToneCurve, tonemap_curve

STACK_SCHEMA = "luxstack/1"


def _rgb(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("RGB triple must be finite and nonnegative")
    return arr


@dataclass(frozen=True)
class LightMeta:
    name: str
    kelvin: float


@dataclass(frozen=True)
class LightStack:
    """Ambient layer plus N OLAT layers and their RGB scales c_i."""

    ambient: HdrImage
    layers: tuple[HdrImage, ...]
    scales: tuple[np.ndarray, ...]  # N RGB triples
    light_meta: tuple[LightMeta, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "scales", tuple(_rgb(s) for s in self.scales))
        if len(self.scales) != len(self.layers):
            raise ValueError("scale count must match layer count")
        meta = self.light_meta or tuple(
            LightMeta(f"light_{i}", 6600.0) for i in range(len(self.layers))
        )
        if len(meta) != len(self.layers):
            raise ValueError("light_meta count must match layer count")
        object.__setattr__(self, "light_meta", tuple(meta))
        for layer in self.layers:
            if not layer.same_shape(self.ambient):
                raise ValueError("all stack images must share dimensions")

    @property
    def num_lights(self) -> int:
        return len(self.layers)

    @property
    def width(self) -> int:
        return self.ambient.width

    @property
    def height(self) -> int:
        return self.ambient.height


@dataclass(frozen=True)
class RemixWeights:
    """User weights for the linear part of the image formation model."""

    weights: tuple[np.ndarray, ...]
    ambient_gain: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(_rgb(w) for w in self.weights))
        object.__setattr__(self, "ambient_gain", _rgb(self.ambient_gain))

    @classmethod
    def identity(cls, stack: LightStack) -> "RemixWeights":
        return cls(weights=stack.scales, ambient_gain=np.ones(3))


@dataclass(frozen=True)
class LightMasks:
    """Three nested binary rasters for one light: emissive, fixture, convex hull."""

    emissive: np.ndarray
    fixture: np.ndarray
    hull: np.ndarray

    def __post_init__(self):
        em = np.asarray(self.emissive, dtype=bool)
        fx = np.asarray(self.fixture, dtype=bool)
        hl = np.asarray(self.hull, dtype=bool)
        if not (em.shape == fx.shape == hl.shape):
            raise ValueError("mask tiers must share shape")
        if np.any(em & ~hl) or np.any(fx & ~hl):
            raise ValueError("mask nesting violated: emissive/fixture must lie inside hull")
        object.__setattr__(self, "emissive", em)
        object.__setattr__(self, "fixture", fx)
        object.__setattr__(self, "hull", hl)


def remix(stack: LightStack, w: RemixWeights) -> HdrImage:
    """ambient_gain * ambient + sum_i w_i * layer_i, per channel."""
    if len(w.weights) != stack.num_lights:
        raise ValueError(
            f"weight count {len(w.weights)} does not match stack light count {stack.num_lights}"
        )
    out = stack.ambient.data * w.ambient_gain  # f32 * f64 -> f64, one pass
    for wi, layer in zip(w.weights, stack.layers):
        out += layer.data * wi
    return HdrImage(stack.width, stack.height, out.astype(np.float32))


def compose_input(stack: LightStack, curve: ToneCurve) -> LdrImage:
    """Tonemapped full composite: the input image the stack decomposes."""
    return tonemap_curve(remix(stack, RemixWeights.identity(stack)), curve)


def one_light_off(full: HdrImage, layer: HdrImage, c) -> HdrImage:
    """Remove one scaled OLAT layer from a full composite, clamped at zero."""
    if not full.same_shape(layer):
        raise ValueError("full and layer dimensions differ")
    c = _rgb(c)
    out = np.maximum(full.data.astype(np.float64) - layer.data.astype(np.float64) * c, 0.0)
    return HdrImage(full.width, full.height, out.astype(np.float32))


def augment_compose(full: HdrImage, layers: list[HdrImage], extra_scales) -> HdrImage:
    """Brighten a composite by re-adding scaled OLAT layers."""
    if len(layers) != len(extra_scales):
        raise ValueError("layer and scale counts differ")
    out = full.data.astype(np.float64).copy()
    for layer, c in zip(layers, extra_scales):
        if not layer.same_shape(full):
            raise ValueError("layer dimensions differ from full image")
        out += layer.data.astype(np.float64) * _rgb(c)
    return HdrImage(full.width, full.height, out.astype(np.float32))


@dataclass(frozen=True)
class ScaleSolution:
    scales: tuple[np.ndarray, ...]
    ambient_gain: np.ndarray
    residual: float  # ||A s - target||_2 over all channels
    degenerate: bool


def solve_scales(ambient: HdrImage, layers: list[HdrImage], target: HdrImage,
                 iters: int = 500, tol: float = 1e-8) -> ScaleSolution:
    """Recover per-light RGB scales plus ambient gain by per-channel NNLS.

    Projected gradient with the step from the Lipschitz bound of the Gram
    matrix, warm-started from the clipped unconstrained least-squares
    solution. Per channel the system is tiny (N+1 columns), so the pixel
    count only enters through the Gram matrix build.
    """
    for layer in layers:
        if not layer.same_shape(ambient):
            raise ValueError("layer dimensions differ from ambient")
    if not target.same_shape(ambient):
        raise ValueError("target dimensions differ from stack images")

    n = len(layers)
    sol = np.zeros((n + 1, 3))
    residual_sq = 0.0
    degenerate = False
    for ch in range(3):
        cols = [ambient.data[..., ch].astype(np.float64).ravel()]
        cols += [layer.data[..., ch].astype(np.float64).ravel() for layer in layers]
        a = np.stack(cols, axis=1)
        b = target.data[..., ch].astype(np.float64).ravel()
        gram = a.T @ a
        atb = a.T @ b
        lip = float(np.linalg.eigvalsh(gram)[-1])
        if lip <= 0.0:
            degenerate = True
            residual_sq += float(b @ b)
            continue
        s, *_ = np.linalg.lstsq(a, b, rcond=None)
        s = np.maximum(s, 0.0)
        step = 1.0 / lip
        for _ in range(iters):
            s_next = np.maximum(s - step * (gram @ s - atb), 0.0)
            if np.max(np.abs(s_next - s)) < tol:
                s = s_next
                break
            s = s_next
        sol[:, ch] = s
        r = a @ s - b
        residual_sq += float(r @ r)

    return ScaleSolution(
        scales=tuple(sol[1 + i] for i in range(n)),
        ambient_gain=sol[0],
        residual=float(np.sqrt(residual_sq)),
        degenerate=degenerate,
    )


def convex_hull_mask(fixture: np.ndarray) -> np.ndarray:
    """Rasterized convex hull of a binary mask.

    Hull vertices are the set pixels' integer (col, row) coordinates
    (monotone chain); a pixel belongs to the output when its center lies in
    the hull polygon, boundary inclusive. All tests are exact in int64.
    """
    fixture = np.asarray(fixture, dtype=bool)
    rows, cols = np.nonzero(fixture)
    if rows.size == 0:
        raise ValueError("fixture mask is empty")
    pts = np.unique(np.stack([cols, rows], axis=1), axis=0)  # (x, y), sorted

    hull = _monotone_chain(pts)
    out = np.zeros_like(fixture)

    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    xs = np.arange(x0, x1 + 1, dtype=np.int64)
    ys = np.arange(y0, y1 + 1, dtype=np.int64)
    gx, gy = np.meshgrid(xs, ys)

    if len(hull) == 1:
        inside = (gx == hull[0][0]) & (gy == hull[0][1])
    elif len(hull) == 2:
        inside = _on_segment(gx, gy, hull[0], hull[1])
    else:
        inside = np.ones(gx.shape, dtype=bool)
        for (ax, ay), (bx, by) in zip(hull, hull[1:] + hull[:1]):
            cross = (bx - ax) * (gy - ay) - (by - ay) * (gx - ax)
            inside &= cross >= 0
    out[y0:y1 + 1, x0:x1 + 1] = inside
    return out


def _monotone_chain(pts: np.ndarray) -> list[tuple[int, int]]:
    """Counterclockwise convex hull (y up) of lexicographically sorted int points."""
    pts = [tuple(int(v) for v in p) for p in pts]
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:  # collinear input collapses to a segment
        return [pts[0], pts[-1]]
    return hull


def _on_segment(gx, gy, a, b) -> np.ndarray:
    ax, ay = a
    bx, by = b
    cross = (bx - ax) * (gy - ay) - (by - ay) * (gx - ax)
    dot = (gx - ax) * (bx - ax) + (gy - ay) * (by - ay)
    seg_len = (bx - ax) ** 2 + (by - ay) ** 2
    return (cross == 0) & (dot >= 0) & (dot <= seg_len)


def dilate_small_mask(emissive: np.ndarray, min_area: int = 64, radius: int = 1,
                      max_iters: int = 8) -> np.ndarray:
    """Grow an undersized emissive mask with a square structuring element.

    Dilation repeats until popcount >= min_area or the iteration cap; a mask
    already large enough (or empty) passes through unchanged.
    """
    mask = np.asarray(emissive, dtype=bool)
    count = int(mask.sum())
    if count == 0 or count >= min_area:
        return mask
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    for _ in range(max_iters):
        mask = ndimage.binary_dilation(mask, structure=structure)
        if int(mask.sum()) >= min_area:
            break
    return mask


def build_light_masks(emissive: np.ndarray, fixture: np.ndarray,
                      min_area: int = 64, radius: int = 1) -> LightMasks:
    """Assemble the three mask tiers, dilating a too-small emissive mask.

    The dilated emissive mask is capped to the hull so the nesting invariant
    survives dilation. An empty emissive mask stays empty.
    """
    emissive = np.asarray(emissive, dtype=bool)
    fixture = np.asarray(fixture, dtype=bool) | emissive
    if not fixture.any():
        zero = np.zeros_like(fixture)
        return LightMasks(zero, zero, zero)
    hull = convex_hull_mask(fixture)
    grown = dilate_small_mask(emissive, min_area=min_area, radius=radius)
    return LightMasks(grown & hull, fixture, hull)


def save_stack(stack: LightStack, directory, masks: list[LightMasks] | None = None) -> Path:
    """Write stack images plus a luxstack/1 manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    formats.write_lxhd(stack.ambient, directory / "ambient.lxhd")
    layer_entries = []
    for i, (layer, meta, scale) in enumerate(zip(stack.layers, stack.light_meta, stack.scales)):
        rel = f"olat_{i:02d}.lxhd"
        formats.write_lxhd(layer, directory / rel)
        entry = {
            "path": rel,
            "name": meta.name,
            "kelvin": meta.kelvin,
            "scale": [float(v) for v in scale],
        }
        if masks is not None:
            for tier in ("emissive", "fixture", "hull"):
                mrel = f"mask_{i:02d}_{tier}.png"
                formats.write_mask_png(getattr(masks[i], tier), directory / mrel)
                entry[f"mask_{tier}"] = mrel
        layer_entries.append(entry)
    manifest = {
        "schema": STACK_SCHEMA,
        "ambient": "ambient.lxhd",
        "lights": layer_entries,
    }
    path = directory / "stack.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_stack(manifest_path) -> tuple[LightStack, list[LightMasks | None]]:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("schema") != STACK_SCHEMA:
        raise ValueError(f"unsupported stack schema: {manifest.get('schema')!r}")
    base = manifest_path.parent
    ambient = formats.read_hdr(base / manifest["ambient"])
    layers, scales, meta, masks = [], [], [], []
    for entry in manifest["lights"]:
        layers.append(formats.read_hdr(base / entry["path"]))
        scales.append(entry["scale"])
        meta.append(LightMeta(entry.get("name", "light"), float(entry.get("kelvin", 6600.0))))
        if "mask_emissive" in entry:
            masks.append(
                LightMasks(
                    formats.read_mask_png(base / entry["mask_emissive"]),
                    formats.read_mask_png(base / entry["mask_fixture"]),
                    formats.read_mask_png(base / entry["mask_hull"]),
                )
            )
        else:
            masks.append(None)
    stack = LightStack(ambient, tuple(layers), tuple(scales), tuple(meta))
    return stack, masks

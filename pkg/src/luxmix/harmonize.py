"""Sequential multi-pass propagation of lighting decompositions over a pose graph.

A propagator handles at most `capacity` views per invocation, so frames are
batched greedily by pose distance: the first pass takes the frames nearest
the source references, later passes grow outward from everything already
processed, optionally chaining intermediate frames in as extra references.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .camera import Camera, Pose
from .image import HdrImage

PLAN_SCHEMA = "luxplan/1"


class PropagationError(RuntimeError):
    def __init__(self, pass_index: int, cause: Exception):
        super().__init__(f"propagator failed on pass {pass_index}: {cause}")
        self.pass_index = pass_index


@dataclass(frozen=True)
class PoseGraph:
    frames: dict  # id -> Pose
    source_refs: tuple[int, ...]

    def __post_init__(self):
        if not self.source_refs:
            raise ValueError("source reference set must be nonempty")
        refs = tuple(sorted(set(self.source_refs)))
        for r in refs:
            if r not in self.frames:
                raise ValueError(f"reference id {r} not in graph")
        object.__setattr__(self, "source_refs", refs)

    @property
    def unprocessed(self) -> list[int]:
        return sorted(i for i in self.frames if i not in self.source_refs)


@dataclass(frozen=True)
class PlanPass:
    targets: tuple[int, ...]
    references: tuple[int, ...]
    chain_refs: tuple[int, ...] = ()
    distances: tuple[float, ...] = ()  # selection distance per target


@dataclass(frozen=True)
class PassPlan:
    passes: tuple[PlanPass, ...]
    capacity: int


def pose_distance(a: Pose, b: Pose, w_rot: float = 0.5) -> float:
    """Translation distance plus w_rot times the rotation geodesic angle."""
    trans = float(np.linalg.norm(a.position - b.position))
    cos_angle = (np.trace(a.rotation.T @ b.rotation) - 1.0) / 2.0
    angle = math.acos(min(1.0, max(-1.0, cos_angle)))
    return trans + w_rot * angle


def _distance_matrix(graph: PoseGraph, ids: list[int], w_rot: float) -> np.ndarray:
    pos = np.stack([graph.frames[i].position for i in ids])
    rot = np.stack([graph.frames[i].rotation for i in ids])
    trans = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    cos = np.clip((np.einsum("aij,bij->ab", rot, rot) - 1.0) / 2.0, -1.0, 1.0)
    return trans + w_rot * np.arccos(cos)


def plan_passes(graph: PoseGraph, capacity: int = 15, chain: bool = True,
                w_rot: float = 0.5) -> PassPlan:
    """Greedy pass construction under the per-invocation view capacity.

    Each pass fills its budget with the unprocessed frames nearest to the
    processed set as of the previous pass (initially the source references),
    ties broken by ascending frame id, equidistant processed frames by
    ascending id. With chaining on, a target whose nearest processed frame is
    not a source reference pulls that frame in as a chained reference,
    costing one slot of the same budget. A pass closes as soon as the nearest
    candidate no longer fits.
    """
    refs = list(graph.source_refs)
    if capacity <= len(refs):
        raise ValueError(f"capacity {capacity} must exceed reference count {len(refs)}")
    ids = sorted(graph.frames)
    index = {f: k for k, f in enumerate(ids)}
    dmat = _distance_matrix(graph, ids, w_rot)

    # (min distance to processed set, nearest processed id), kept incrementally
    best: dict[int, tuple[float, int]] = {}
    unprocessed = set(graph.unprocessed)
    for u in unprocessed:
        best[u] = min((float(dmat[index[u], index[p]]), p) for p in refs)
    passes = []

    while unprocessed:
        targets: list[int] = []
        chain_refs: list[int] = []
        distances: list[float] = []
        for cand in sorted(unprocessed, key=lambda u: (best[u][0], u)):
            dist, nearest = best[cand]
            needs_chain = chain and nearest not in graph.source_refs and nearest not in chain_refs
            slots = 1 + (1 if needs_chain else 0)
            if len(refs) + len(targets) + len(chain_refs) + slots > capacity:
                break
            targets.append(cand)
            distances.append(dist)
            if needs_chain:
                chain_refs.append(nearest)
        if not targets:
            raise ValueError(
                f"capacity {capacity} leaves no room for a target after chain overhead"
            )
        passes.append(PlanPass(tuple(targets), tuple(refs), tuple(chain_refs), tuple(distances)))
        unprocessed -= set(targets)
        for u in unprocessed:
            for t in sorted(targets):
                nd = float(dmat[index[u], index[t]])
                if (nd, t) < best[u]:
                    best[u] = (nd, t)
    return PassPlan(tuple(passes), capacity)


def validate_plan(graph: PoseGraph, plan: PassPlan) -> None:
    """Partition, capacity, anchoring and execution-order invariants."""
    seen: set[int] = set()
    produced: set[int] = set(graph.source_refs)
    for k, p in enumerate(plan.passes):
        if set(graph.source_refs) - set(p.references):
            raise ValueError(f"pass {k} drops source references")
        load = len(p.targets) + len(p.references) + len(p.chain_refs)
        if load > plan.capacity:
            raise ValueError(f"pass {k} exceeds capacity: {load} > {plan.capacity}")
        for c in p.chain_refs:
            if c not in produced:
                raise ValueError(f"pass {k} chains {c} before it was produced")
        overlap = seen & set(p.targets)
        if overlap:
            raise ValueError(f"frames targeted twice: {sorted(overlap)}")
        seen |= set(p.targets)
        produced |= set(p.targets)
    expected = set(graph.unprocessed)
    if seen != expected:
        raise ValueError(f"plan does not partition the frames: missing {sorted(expected - seen)}")


def plan_to_json(plan: PassPlan) -> dict:
    return {
        "schema": PLAN_SCHEMA,
        "capacity": plan.capacity,
        "passes": [
            {
                "targets": list(p.targets),
                "references": list(p.references),
                "chain_refs": list(p.chain_refs),
                "distances": list(p.distances),
            }
            for p in plan.passes
        ],
    }


def plan_from_json(obj: dict) -> PassPlan:
    if obj.get("schema") != PLAN_SCHEMA:
        raise ValueError(f"unsupported plan schema: {obj.get('schema')!r}")
    return PassPlan(
        tuple(
            PlanPass(tuple(p["targets"]), tuple(p["references"]),
                     tuple(p["chain_refs"]), tuple(p["distances"]))
            for p in obj["passes"]
        ),
        obj["capacity"],
    )


@dataclass(frozen=True)
class ViewDecomposition:
    """Per-view lighting decomposition: ambient plus M OLAT layers."""

    ambient: HdrImage
    layers: tuple[HdrImage, ...]
    coverage: np.ndarray | None = None  # bool (H, W); None means fully covered

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))


class Propagator:
    """Capability that decomposes target views given decomposed references."""

    capacity: int = 15

    def propagate(self, refs: dict, target_ids: list[int]) -> dict:
        raise NotImplementedError


def execute(plan: PassPlan, graph: PoseGraph, propagator: Propagator,
            decomposed_refs: dict) -> dict:
    """Run the passes in order, feeding earlier outputs into later chain refs."""
    validate_plan(graph, plan)
    for r in graph.source_refs:
        if r not in decomposed_refs:
            raise ValueError(f"missing decomposition for source reference {r}")
    results: dict = dict(decomposed_refs)
    for k, p in enumerate(plan.passes):
        refs = {i: results[i] for i in list(p.references) + list(p.chain_refs)}
        try:
            out = propagator.propagate(refs, list(p.targets))
        except Exception as exc:  # surfaced with scheduling context
            raise PropagationError(k, exc) from exc
        missing = set(p.targets) - set(out)
        if missing:
            raise PropagationError(
                k, RuntimeError(f"propagator returned no output for {sorted(missing)}"))
        results.update(out)
    return results


class OraclePropagator(Propagator):
    """Renders the true decomposition per target pose; ignores references."""

    def __init__(self, scene, cameras: dict):
        from . import oracle

        self._oracle = oracle
        self.scene = scene
        self.cameras = cameras

    def propagate(self, refs: dict, target_ids: list[int]) -> dict:
        out = {}
        for i in target_ids:
            stack = self._oracle.render_stack(self.scene, self.cameras[i])
            out[i] = ViewDecomposition(stack.ambient, stack.layers)
        return out


class ReprojectionPropagator(Propagator):
    """Depth-reprojection stand-in: warps reference layers into target views.

    Holes (pixels no reference sees at consistent depth) stay zero and are
    flagged in the coverage mask; filling them in is explicitly not this
    propagator's job.
    """

    def __init__(self, cameras: dict, depths: dict, scene_diag: float):
        self.cameras = cameras
        self.depths = depths
        self.tol = 0.02 * scene_diag

    def propagate(self, refs: dict, target_ids: list[int]) -> dict:
        if not refs:
            raise ValueError("reprojection needs at least one decomposed reference")
        return {
            i: reproject_decomposition(
                refs, self.cameras, self.depths, self.cameras[i], self.depths[i], self.tol)
            for i in target_ids
        }


def reproject_decomposition(refs: dict, cameras: dict, depths: dict,
                            target_cam: Camera, target_depth: np.ndarray,
                            tol: float) -> ViewDecomposition:
    """Inverse-warp reference decompositions into the target view.

    Every target pixel is unprojected with the target depth and looked up in
    each reference (nearest camera first); the first reference whose depth
    agrees within tol supplies all layers for that pixel.
    """
    h, w = target_depth.shape
    dirs = target_cam.pixel_directions().reshape(-1, 3) @ target_cam.pose.rotation.T
    pts = target_cam.pose.position + dirs * np.asarray(target_depth, dtype=np.float64).reshape(-1, 1)

    first = next(iter(refs.values()))
    m = len(first.layers)
    planes = np.zeros((pts.shape[0], (m + 1) * 3))
    covered = np.zeros(pts.shape[0], dtype=bool)

    order = sorted(refs, key=lambda i: pose_distance(cameras[i].pose, target_cam.pose))
    for ref_id in order:
        ref = refs[ref_id]
        cam = cameras[ref_id]
        remaining = ~covered
        if not remaining.any():
            break
        u, v, rng, ok = cam.project(pts[remaining])
        depth_ref = np.asarray(depths[ref_id], dtype=np.float64)

        take = np.zeros(ok.shape, dtype=bool)
        if ok.any():
            # nearest-pixel depth for the visibility test: interpolating
            # across silhouette edges would fabricate holes
            sampled = _nearest_depth_at(depth_ref, cam, u[ok], v[ok])
            take[ok] = np.abs(rng[ok] - sampled) <= tol
        if not take.any():
            continue
        stackimg = np.concatenate(
            [ref.ambient.data] + [layer.data for layer in ref.layers], axis=2)
        values = _bilinear_rgb(stackimg, cam, u[take], v[take])
        idx = np.nonzero(remaining)[0][take]
        planes[idx] = values
        covered[idx] = True

    shape = (h, w, 3)
    ambient = HdrImage(w, h, np.maximum(planes[:, :3], 0.0).reshape(shape).astype(np.float32))
    layers = tuple(
        HdrImage(w, h, np.maximum(planes[:, 3 * (k + 1): 3 * (k + 2)], 0.0)
                 .reshape(shape).astype(np.float32))
        for k in range(m)
    )
    return ViewDecomposition(ambient, layers, covered.reshape(h, w))


def _nearest_depth_at(depth: np.ndarray, cam: Camera, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = depth.shape
    y = np.clip(np.round(v - 0.5).astype(np.int64), 0, h - 1)
    x = np.round(u - 0.5).astype(np.int64)
    x = np.mod(x, w) if cam.kind == "equirect" else np.clip(x, 0, w - 1)
    return depth[y, x]


def _bilinear_rgb(img: np.ndarray, cam: Camera, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
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
    fx = fx[:, None]
    fy = fy[:, None]
    top = img[y0, x0w] * (1.0 - fx) + img[y0, x1w] * fx
    bot = img[y1, x0w] * (1.0 - fx) + img[y1, x1w] * fx
    return top * (1.0 - fy) + bot * fy

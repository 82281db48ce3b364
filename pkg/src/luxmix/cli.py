"""Command line front end: scene generation, oracle rendering, fitting, reports."""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import formats
from .camera import Camera, Pose, rotation_from_angles
from .image import HdrImage, ToneCurve, tonemap_agx, tonemap_curve
from .metrics import evaluate
from .scene import generate_scene, load_scene, save_scene, temperature_to_rgb


@click.group()
def main():
    """luxmix: relightable light-stack engine."""


@main.command("gen-scene")
@click.option("--seed", type=int, required=True, help="generator seed (u64)")
@click.option("--lights", type=int, default=None, help="light count (2-6)")
@click.option("--cameras", type=int, default=4)
@click.option("--out", type=click.Path(), default="scene.json", show_default=True)
def gen_scene(seed, lights, cameras, out):
    """Generate a deterministic box-room scene description."""
    scene, cams = generate_scene(seed, num_lights=lights, num_cameras=cameras)
    save_scene(scene, out, cams)
    click.echo(f"wrote {out} ({len(scene.lights)} lights, {len(cams)} cameras)")


def _camera_from_options(scene, cams, camera_index, equirect, res):
    if not cams:
        raise click.UsageError("scene file has no cameras")
    base = cams[camera_index % len(cams)]
    w, h = res
    if equirect:
        return Camera.equirect(w, h, base.pose)
    return Camera.perspective(70.0, w, h, base.pose)


def _parse_res(value, equirect):
    if value:
        w, h = (int(v) for v in value.lower().split("x"))
        return w, h
    return (2048, 1024) if equirect else (512, 512)


@main.command("render-olat")
@click.argument("scene_file", type=click.Path(exists=True))
@click.option("--light", "light_index", type=int, default=None,
              help="OLAT light index; omit with --ambient/--full")
@click.option("--ambient", "mode", flag_value="ambient")
@click.option("--full", "mode", flag_value="full")
@click.option("--depth", "mode", flag_value="depth")
@click.option("--camera-index", type=int, default=0)
@click.option("--equirect/--perspective", default=True)
@click.option("--res", type=str, default=None, help="WxH, e.g. 512x256")
@click.option("--out", type=click.Path(), required=True, help=".lxhd or .pfm output")
@click.option("--png", type=click.Path(), default=None, help="AgX preview PNG")
def render_olat_cmd(scene_file, light_index, mode, camera_index, equirect, res, out, png):
    """Render a ground-truth OLAT (or ambient/full/depth) image of a scene."""
    from . import oracle

    scene, cams = load_scene(scene_file)
    cam = _camera_from_options(scene, cams, camera_index, equirect, _parse_res(res, equirect))
    if mode == "depth":
        depth = oracle.render_depth(scene, cam)
        img = HdrImage(cam.width, cam.height, np.repeat(depth[..., None], 3, axis=2))
    elif mode == "ambient":
        img = oracle.render_ambient(scene, cam)
    elif mode == "full":
        img = oracle.render_full(scene, cam)
    else:
        if light_index is None:
            raise click.UsageError("--light is required unless --ambient/--full/--depth")
        if not 0 <= light_index < len(scene.lights):
            raise click.UsageError(f"light index {light_index} out of range")
        img = oracle.render_olat(scene, light_index, cam)
    formats.write_hdr(img, out)
    if png:
        formats.write_png(tonemap_agx(img), png)
    click.echo(f"wrote {out}")


@main.command("decompose-check")
@click.argument("scene_file", type=click.Path(exists=True))
@click.option("--res", type=str, default="256x128")
@click.option("--report", type=click.Path(), default=None,
              help="write CSV + figure next to this path")
def decompose_check(scene_file, res, report):
    """Verify the superposition identity: full = ambient + sum of OLATs."""
    from . import oracle
    from .report import write_decompose_report

    scene, cams = load_scene(scene_file)
    w, h = (int(v) for v in res.lower().split("x"))
    cam = Camera.equirect(w, h, cams[0].pose) if cams else Camera.equirect(w, h)
    full = oracle.render_full(scene, cam).data.astype(np.float64)
    acc = oracle.render_ambient(scene, cam).data.astype(np.float64)
    for i in scene.controllable_indices:
        acc += oracle.render_olat(scene, i, cam).data
    residual = float(np.max(np.abs(full - acc)))
    click.echo(f"max superposition residual: {residual:.3e}")
    if report:
        write_decompose_report(
            [{"scene": Path(scene_file).stem, "lights": len(scene.lights),
              "max_residual": residual}], report)
    if residual > 1e-5:
        click.echo("FAIL: residual exceeds 1e-5", err=True)
        sys.exit(1)


@main.command("sample-views")
@click.argument("scene_file", type=click.Path(exists=True))
@click.option("--seed", type=int, required=True)
@click.option("--count", type=int, default=8, show_default=True)
@click.option("--min-overlap", type=float, default=0.3, show_default=True)
@click.option("--min-clearance", type=float, default=0.3, show_default=True)
@click.option("--fov", type=float, default=70.0)
@click.option("--pano-res", type=str, default="512x256")
@click.option("--out", type=click.Path(), default="trajectory.json", show_default=True)
def sample_views(scene_file, seed, count, min_overlap, min_clearance, fov, pano_res, out):
    """Sample a co-visibility-constrained multi-view trajectory."""
    from . import oracle
    from .views import PanoFrame, sample_trajectory, trajectory_to_json

    scene, cams = load_scene(scene_file)
    w, h = (int(v) for v in pano_res.lower().split("x"))
    frames = []
    for cam in cams:
        pano_cam = Camera.equirect(w, h, cam.pose)
        frames.append(PanoFrame(
            oracle.render_full(scene, pano_cam),
            oracle.render_depth(scene, pano_cam),
            oracle.render_light_masks(scene, 0, pano_cam).emissive,
            pano_cam,
        ))
    result = sample_trajectory(frames, seed=seed, count=count, min_overlap=min_overlap,
                               min_clearance=min_clearance, fov=fov,
                               covis_tol=0.02 * scene.room.diagonal)
    Path(out).write_text(json.dumps(trajectory_to_json(result), indent=2))
    click.echo(f"wrote {out} ({len(result.views)} views, coverage {result.coverage:.2f}"
               f"{'' if result.complete else ', PARTIAL'})")


@main.command("fit")
@click.argument("scene_file", type=click.Path(exists=True))
@click.option("--seed", type=int, default=0)
@click.option("--views", type=int, default=16, show_default=True)
@click.option("--res", type=int, default=128, show_default=True)
@click.option("--points", type=int, default=2200, show_default=True)
@click.option("--stage1-iters", type=int, default=1500)
@click.option("--stage2/--no-stage2", default=True)
@click.option("--joint-iters", type=int, default=4000)
@click.option("--frozen-iters", type=int, default=2000)
@click.option("--out-dir", type=click.Path(), default="fit_out", show_default=True)
def fit_cmd(scene_file, seed, views, res, points, stage1_iters, stage2,
            joint_iters, frozen_iters, out_dir):
    """Fit a relightable splat cloud to oracle renders of a scene."""
    from . import oracle
    from .fitting import fit_stage1, fit_stage2
    from .report import write_fit_telemetry
    from .splats import FitConfig, save_cloud, unproject_views

    scene, _ = load_scene(scene_file)
    rng = np.random.default_rng(np.uint64(seed))
    cams = ring_cameras(scene, views, rng, res=res)
    curve = ToneCurve(2.2, 1e-3)
    originals, targets, depths = [], [], []
    names = None
    for cam in cams:
        stack = oracle.render_stack(scene, cam)
        full = stack.ambient.data.astype(np.float64) + sum(
            layer.data.astype(np.float64) for layer in stack.layers)
        originals.append(tonemap_curve(HdrImage(cam.width, cam.height, full), curve))
        targets.append([stack.ambient] + list(stack.layers))
        depths.append(oracle.render_depth(scene, cam))
        names = ["ambient"] + [m.name for m in stack.light_meta]
    pts, cols = unproject_views(cams, depths, [o.data for o in originals],
                                stride=4, max_points=points, rng=rng)
    cfg = FitConfig(iters_stage1=stage1_iters, iters_joint=joint_iters,
                    iters_frozen=frozen_iters, seed=seed)
    cloud = fit_stage1(cams, originals, pts, cols, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if stage2:
        result = fit_stage2(cloud, cams, targets, originals, cfg)
        save_cloud(result.cloud, out / "cloud.lxgs", w=result.w,
                   gamma=result.gamma, beta=result.beta, light_names=names)
        write_fit_telemetry(result.telemetry, out / "telemetry.csv")
        click.echo(f"wrote {out}/cloud.lxgs (gamma={result.gamma:.3f})")
    else:
        save_cloud(cloud, out / "cloud.lxgs", light_names=["base"])
        click.echo(f"wrote {out}/cloud.lxgs (stage 1 only)")


def ring_cameras(scene, count, rng, res=128, fov=70.0, rings=1):
    """Inward-looking camera rings at eye height, used by fit and eval paths.

    Single ring by default: held-out poses then interpolate their ring
    neighbors without cross-radius parallax.
    """
    center = scene.room.center
    ext = scene.room.hi - scene.room.lo
    cams = []
    per_ring = max(1, count // rings)
    radii = [0.35] if rings == 1 else list(np.linspace(0.31, 0.38, rings))

    def clear_of_obstacles(p):
        pad = 0.25
        for ob in scene.obstacles:
            if np.all(p >= ob.box.lo - pad) and np.all(p <= ob.box.hi + pad):
                return False
        return True

    for i in range(count):
        ring = i % rings
        ang = 2 * math.pi * ((i // rings) + ring / rings) / per_ring
        pos = None
        for shrink in (1.0, 0.85, 0.7, 0.55, 0.4):
            r = radii[ring] * shrink
            cand = center + np.array([math.cos(ang) * r * ext[0],
                                      math.sin(ang) * r * ext[1], 0.0])
            cand[2] = min(1.6 - 0.1 * ring, scene.room.hi[2] - 0.3)
            if clear_of_obstacles(cand):
                pos = cand
                break
        if pos is None:
            pos = cand  # fall back to the innermost candidate
        look = center - pos
        az = math.atan2(-look[1], look[0])
        el = float(rng.uniform(-0.15, 0.05))
        cams.append(Camera.perspective(fov, res, res, Pose(rotation_from_angles(az, el), pos)))
    return cams


@main.command("remix")
@click.argument("source", type=click.Path(exists=True))
@click.option("--weights", "weights_json", type=str, default=None,
              help='JSON array of [r,g,b] rows (slot 0 = ambient)')
@click.option("--kelvin", type=(int, float), multiple=True,
              help="slot INDEX KELVIN: weight a slot by blackbody color")
@click.option("--azimuth", type=float, default=0.0)
@click.option("--elevation", type=float, default=0.0)
@click.option("--radius", type=float, default=None)
@click.option("--res", type=int, default=512)
@click.option("--out", type=click.Path(), required=True, help="PNG output")
@click.option("--hdr-out", type=click.Path(), default=None, help="optional LXHD output")
def remix_cmd(source, weights_json, kelvin, azimuth, elevation, radius, res, out, hdr_out):
    """Remix a stored light stack (stack.json) or splat cloud (.lxgs)."""
    from .splats import RemixState, load_cloud, render_remix
    from .stack import RemixWeights, load_stack, remix as stack_remix

    source = Path(source)
    if source.suffix == ".json":
        stack, _ = load_stack(source)
        slots = stack.num_lights + 1
        weights = _resolve_weights(weights_json, kelvin, slots,
                                   default=np.vstack([np.ones((1, 3))]
                                                     + [s.reshape(1, 3) for s in stack.scales]))
        linear = stack_remix(stack, RemixWeights(tuple(weights[1:]), weights[0]))
    else:
        cloud, sidecar = load_cloud(source)
        weights = _resolve_weights(weights_json, kelvin, cloud.num_slots,
                                   default=np.asarray(sidecar["w"]))
        from .camera import direction_from_angles

        lo, hi = cloud.positions.min(axis=0), cloud.positions.max(axis=0)
        centroid, extent = 0.5 * (lo + hi), float(np.linalg.norm(hi - lo))
        r = radius if radius is not None else 0.9 * extent
        pose = Pose(rotation_from_angles(azimuth, elevation),
                    centroid - direction_from_angles(azimuth, elevation) * r)
        cam = Camera.perspective(70.0, res, res, pose)
        linear = render_remix(cloud, cam, RemixState(weights))
    formats.write_png(tonemap_curve(linear, ToneCurve(2.2, 1e-3)), out)
    if hdr_out:
        formats.write_hdr(linear, hdr_out)
    click.echo(f"wrote {out}")


def _resolve_weights(weights_json, kelvin_opts, slots, default):
    weights = np.asarray(default, dtype=np.float64).reshape(slots, 3) \
        if weights_json is None else np.asarray(json.loads(weights_json), dtype=np.float64)
    if weights.shape != (slots, 3):
        raise click.UsageError(f"expected {slots} weight rows, got {weights.shape}")
    for index, k in kelvin_opts:
        if not 0 <= index < slots:
            raise click.UsageError(f"slot {index} out of range")
        weights[index] = np.linalg.norm(weights[index]) / math.sqrt(3.0) \
            * temperature_to_rgb(k)
    return weights


@main.command("plan")
@click.option("--poses", "poses_file", type=click.Path(exists=True), required=True,
              help='JSON {"frames": [{"id", "rotation", "position"}], "refs": [...]}')
@click.option("--capacity", type=int, default=15, show_default=True)
@click.option("--chain/--no-chain", default=True)
@click.option("--out", type=click.Path(), default="plan.json", show_default=True)
@click.option("--report", type=click.Path(), default=None)
def plan_cmd(poses_file, capacity, chain, out, report):
    """Plan propagation passes over a camera pose graph."""
    from .harmonize import PoseGraph, plan_passes, plan_to_json
    from .report import write_plan_report

    obj = json.loads(Path(poses_file).read_text())
    frames = {int(f["id"]): Pose(np.asarray(f["rotation"]).reshape(3, 3), f["position"])
              for f in obj["frames"]}
    graph = PoseGraph(frames, tuple(int(r) for r in obj["refs"]))
    plan = plan_passes(graph, capacity=capacity, chain=chain)
    plan_obj = plan_to_json(plan)
    Path(out).write_text(json.dumps(plan_obj, indent=2))
    if report:
        write_plan_report(plan_obj, report)
    click.echo(f"wrote {out} ({len(plan.passes)} passes)")


@main.command("eval")
@click.option("--pred", "pred_dir", type=click.Path(exists=True), required=True)
@click.option("--gt", "gt_dir", type=click.Path(exists=True), required=True)
@click.option("--linear", is_flag=True, help="evaluate in linear HDR (peak = gt max)")
@click.option("--out", type=click.Path(), default="eval.csv", show_default=True)
def eval_cmd(pred_dir, gt_dir, linear, out):
    """Channel-rescaled PSNR/SSIM of matching HDR files in two directories."""
    from .report import write_eval_report

    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    rows = []
    for pred_path in sorted(list(pred_dir.glob("*.lxhd")) + list(pred_dir.glob("*.pfm"))):
        gt_path = gt_dir / pred_path.name
        if not gt_path.exists():
            continue
        pred = formats.read_hdr(pred_path)
        gt = formats.read_hdr(gt_path)
        if linear:
            result = evaluate(pred.data, gt.data, peak=max(float(gt.data.max()), 1e-6))
        else:
            result = evaluate(tonemap_agx(pred).data, tonemap_agx(gt).data)
        rows.append({
            "scene": pred_dir.name, "view": pred_path.stem, "light": "-",
            "psnr": result.psnr, "ssim": result.ssim,
            "scale_r": result.scales[0], "scale_g": result.scales[1],
            "scale_b": result.scales[2],
        })
    if not rows:
        raise click.UsageError("no matching HDR files between the two directories")
    write_eval_report(rows, out)
    click.echo(f"wrote {out} and {Path(out).with_suffix('.png')} ({len(rows)} pairs)")


@main.command("kelvin-table")
@click.option("--out", type=click.Path(), default=None, help="write JSON (default stdout)")
def kelvin_table_cmd(out):
    """Golden blackbody color table shared with the UI."""
    kelvins = list(range(1800, 10001, 50))
    table = {"kelvin": kelvins,
             "rgb": [[float(v) for v in temperature_to_rgb(k)] for k in kelvins]}
    text = json.dumps(table, indent=2)
    if out:
        Path(out).write_text(text)
        click.echo(f"wrote {out}")
    else:
        click.echo(text)


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=None, help="default: env LUXMIX_PORT or 8090")
def serve_cmd(host, port):
    """Run the HTTP render service (serves the web UI under /ui)."""
    from .service import run

    run(host=host, port=port)


if __name__ == "__main__":
    main()

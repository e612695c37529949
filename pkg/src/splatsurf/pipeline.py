"""Pipeline stages and the run manifest.

Each stage reads its inputs from disk, writes its outputs under the run
output directory, and reports the files it produced. The manifest records a
config hash and output hashes per stage so reruns can skip completed work.
Frame-level work parallelizes over threads; per-frame outputs are
independent, so results are identical for any thread count.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shlex
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluation, fusion, segmentation, stereo
from .camera import (
    Frame,
    baseline_from_radius,
    load_camera_file,
    make_stereo_rig,
    scene_radius,
    unproject_pixels,
)
from .config import PipelineConfig
from .imgio import load_mask_png, load_pfm, load_png, save_mask_png, save_pfm, save_png
from .mesh import load_mesh_ply, save_mesh_ply
from .render import load_gaussian_ply, load_scene, render_analytic, render_splats

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class InputError(Exception):
    """Missing or unreadable inputs / inconsistent configuration (exit 2)."""


class StageError(Exception):
    """A stage failed while processing (exit 1)."""


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _parallel_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _hash_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise InputError(f"{what} not found: {path}")
    return path


def _load_frames(config: PipelineConfig) -> list[Frame]:
    path = _require(Path(config.scene.camera_file), "camera file")
    return load_camera_file(path)


def _rig_table_path(outdir: Path) -> Path:
    return outdir / "renders" / "rig.txt"


def _load_rig_table(outdir: Path) -> dict[str, tuple[float, float]]:
    """frame_id -> (fx, baseline) as written by the render stage."""
    table = {}
    path = _require(_rig_table_path(outdir), "rig metadata (run render-stereo first)")
    for line in path.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        fid, fx, baseline = line.split()
        table[fid] = (float(fx), float(baseline))
    return table


def _stereo_params(config: PipelineConfig, frame: Frame) -> stereo.StereoParams:
    c = config.stereo
    kwargs = dict(
        p1=c.p1,
        p2=c.p2,
        num_paths=c.num_paths,
        lr_threshold=c.lr_threshold,
        uniqueness_ratio=c.uniqueness_ratio,
    )
    if c.max_disparity == "auto":
        return stereo.StereoParams.for_camera(frame.intrinsics, **kwargs)
    return stereo.StereoParams(max_disparity=int(c.max_disparity), **kwargs)


def load_depth_frame(outdir: Path, frame: Frame, baseline: float) -> stereo.DepthFrame:
    """Reassemble a DepthFrame from the match stage's on-disk outputs."""
    stereo_dir = outdir / "stereo"
    fid = frame.frame_id
    depth = load_pfm(_require(stereo_dir / f"depth_{fid}.pfm", f"depth map for frame {fid}"))
    valid = load_mask_png(stereo_dir / f"valid_{fid}.png")
    occluded = load_mask_png(stereo_dir / f"occl_{fid}.png")
    in_range = load_mask_png(stereo_dir / f"range_{fid}.png")
    return stereo.DepthFrame(
        depth=depth,
        valid=valid,
        occluded=occluded,
        in_range=in_range,
        baseline=baseline,
        intrinsics=frame.intrinsics,
        pose=frame.pose,
    )


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_render(config: PipelineConfig, outdir: Path) -> tuple[list[str], int]:
    """Render left/right stereo pairs at every ingested pose.

    The left eye sits exactly at the original pose; analytic scenes also
    emit exact depth for the left eye as PFM.
    """
    frames = _load_frames(config)
    radius = scene_radius([f.pose for f in frames])
    baseline = baseline_from_radius(radius, config.rig.baseline_fraction)
    logger.info("scene radius %.4f, baseline %.4f", radius, baseline)

    if config.scene.source == "analytic":
        scene = load_scene(_require(Path(config.scene.analytic_scene), "analytic scene"))
        render = lambda intr, pose: render_analytic(scene, intr, pose)
    else:
        cloud = load_gaussian_ply(_require(Path(config.scene.splat_ply), "splat PLY"))
        render = lambda intr, pose: render_splats(cloud, intr, pose)

    render_dir = outdir / "renders"
    render_dir.mkdir(parents=True, exist_ok=True)

    def render_one(frame: Frame):
        try:
            rig = make_stereo_rig(frame.pose, frame.intrinsics, baseline)
            left = render(frame.intrinsics, rig.left)
            right = render(frame.intrinsics, rig.right)
            produced = []
            left_path = render_dir / f"left_{frame.frame_id}.png"
            right_path = render_dir / f"right_{frame.frame_id}.png"
            save_png(left_path, left.rgb)
            save_png(right_path, right.rgb)
            produced += [left_path, right_path]
            if left.depth is not None:
                depth_path = render_dir / f"oracle_depth_{frame.frame_id}.pfm"
                save_pfm(depth_path, left.depth)
                produced.append(depth_path)
            return produced, left.skipped_elements + right.skipped_elements
        except Exception as exc:
            raise StageError(f"render failed on frame {frame.frame_id}: {exc}") from exc

    results = _parallel_map(render_one, frames, config.run.threads)
    outputs = [p for produced, _ in results for p in produced]
    warnings = sum(w for _, w in results)

    rig_lines = ["# frame_id fx baseline"]
    rig_lines += [f"{f.frame_id} {f.intrinsics.fx:.17g} {baseline:.17g}" for f in frames]
    _rig_table_path(outdir).write_text("\n".join(rig_lines) + "\n")
    outputs.append(_rig_table_path(outdir))
    return [str(p.relative_to(outdir)) for p in outputs], warnings


def stage_match(config: PipelineConfig, outdir: Path) -> tuple[list[str], int]:
    """Stereo-match every rendered pair and write gated depth frames."""
    frames = _load_frames(config)
    rig_table = _load_rig_table(outdir)
    stereo_dir = outdir / "stereo"
    stereo_dir.mkdir(parents=True, exist_ok=True)
    render_dir = outdir / "renders"

    def match_one(frame: Frame):
        fid = frame.frame_id
        try:
            fx, baseline = rig_table[fid]
            left = load_png(_require(render_dir / f"left_{fid}.png", f"left render for frame {fid}"))
            right = load_png(_require(render_dir / f"right_{fid}.png", f"right render for frame {fid}"))
            params = _stereo_params(config, frame)
            disp_left, disp_right = stereo.match_sgm(left, right, params)
            occluded = stereo.occlusion_mask(disp_left, disp_right, params.lr_threshold)
            depth = stereo.disparity_to_depth(
                disp_left, fx, baseline, intrinsics=frame.intrinsics, pose=frame.pose
            )
            depth = stereo.apply_masks(depth, occluded)
            produced = {
                f"disp_{fid}.pfm": lambda p: save_pfm(p, disp_left.values),
                f"depth_{fid}.pfm": lambda p: save_pfm(p, depth.depth),
                f"valid_{fid}.png": lambda p: save_mask_png(p, depth.valid),
                f"occl_{fid}.png": lambda p: save_mask_png(p, depth.occluded),
                f"range_{fid}.png": lambda p: save_mask_png(p, depth.in_range),
            }
            paths = []
            for name, writer in produced.items():
                path = stereo_dir / name
                writer(path)
                paths.append(path)
            meta = stereo_dir / f"meta_{fid}.txt"
            meta.write_text(
                f"fx {fx:.17g}\nbaseline {baseline:.17g}\n"
                f"lr_threshold {params.lr_threshold:.17g}\n"
                f"max_disparity {params.max_disparity}\n"
                f"uniqueness_ratio {params.uniqueness_ratio:.17g}\n"
                f"p1 {params.p1}\np2 {params.p2}\nnum_paths {params.num_paths}\n"
            )
            paths.append(meta)
            return paths
        except InputError:
            raise
        except Exception as exc:
            raise StageError(f"stereo matching failed on frame {fid}: {exc}") from exc

    results = _parallel_map(match_one, frames, config.run.threads)
    outputs = [p for paths in results for p in paths]
    return [str(p.relative_to(outdir)) for p in outputs], 0


def stage_segment(config: PipelineConfig, outdir: Path) -> tuple[list[str], int]:
    """Track the initial object mask across all frames."""
    frames = _load_frames(config)
    rig_table = _load_rig_table(outdir)
    initial = load_mask_png(
        _require(Path(config.segmentation.initial_mask), "initial object mask")
    )
    images = [
        load_png(_require(outdir / "renders" / f"left_{f.frame_id}.png", "left render"))
        for f in frames
    ]
    depths = [load_depth_frame(outdir, f, rig_table[f.frame_id][1]) for f in frames]
    cameras = [(f.intrinsics, f.pose) for f in frames]

    if config.segmentation.refiner == "external":
        if not config.segmentation.refiner_cmd:
            raise InputError("segmentation.refiner=external requires refiner_cmd")
        refiner = segmentation.ExternalRefiner(
            command=shlex.split(config.segmentation.refiner_cmd),
            exchange_dir=outdir / "segment_exchange",
        )
    else:
        refiner = segmentation.identity_refiner

    track = segmentation.track_object(
        images,
        depths,
        cameras,
        initial,
        refiner=refiner,
        dilation_radius=config.segmentation.dilation_radius,
        num_seeds=config.segmentation.num_seeds,
    )
    mask_dir = outdir / "masks"
    mask_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for frame, mask, seeds in zip(frames, track.masks, track.seeds):
        mask_path = mask_dir / f"mask_{frame.frame_id}.png"
        seeds_path = mask_dir / f"seeds_{frame.frame_id}.txt"
        save_mask_png(mask_path, mask)
        segmentation.save_seeds(seeds_path, seeds)
        outputs += [mask_path, seeds_path]
    warnings = 0 if track.lost_at is None else 1
    return [str(p.relative_to(outdir)) for p in outputs], warnings


def stage_fuse(config: PipelineConfig, outdir: Path) -> tuple[list[str], int]:
    """Integrate all depth frames into a TSDF volume and extract the mesh.

    Frames are consumed sequentially in frame-id order (integration itself is
    order-invariant; the fixed order keeps runs reproducible)."""
    frames = _load_frames(config)
    rig_table = _load_rig_table(outdir)
    depth_frames = []
    rgbs = []
    for frame in frames:
        df = load_depth_frame(outdir, frame, rig_table[frame.frame_id][1])
        if config.fusion.apply_object_masks:
            mask_path = _require(
                outdir / "masks" / f"mask_{frame.frame_id}.png",
                f"object mask for frame {frame.frame_id} (run segment first)",
            )
            df.valid &= load_mask_png(mask_path)
        depth_frames.append(df)
        rgbs.append(load_png(outdir / "renders" / f"left_{frame.frame_id}.png"))

    voxel_size = None if config.fusion.voxel_size == "auto" else float(config.fusion.voxel_size)
    resolution = config.fusion.grid_resolution if voxel_size is None else None
    truncation = None if config.fusion.truncation == "auto" else float(config.fusion.truncation)
    try:
        volume = fusion.fit_volume(
            depth_frames,
            voxel_size=voxel_size,
            grid_resolution=resolution,
            truncation=truncation,
            lr_threshold=config.stereo.lr_threshold,
            weight_cap=config.fusion.weight_cap,
        )
    except fusion.FusionError as exc:
        raise StageError(str(exc)) from exc
    logger.info(
        "volume dims %s, voxel %.5f, truncation %.5f",
        volume.dims, volume.voxel_size, volume.truncation,
    )
    for frame, df, rgb in zip(frames, depth_frames, rgbs):
        updated = fusion.integrate(volume, df, rgb)
        logger.debug("frame %s: %d voxels updated", frame.frame_id, updated)

    mesh_raw = fusion.extract_mesh(volume)
    mesh = fusion.clean_mesh(mesh_raw, config.fusion.min_triangles)
    fused_dir = outdir / "fused"
    fused_dir.mkdir(parents=True, exist_ok=True)
    save_mesh_ply(fused_dir / "mesh_raw.ply", mesh_raw)
    save_mesh_ply(fused_dir / "mesh.ply", mesh)
    meta = {
        "voxel_size": volume.voxel_size,
        "truncation": volume.truncation,
        "dims": list(volume.dims),
        "origin": list(volume.origin),
        "weight_cap": volume.weight_cap,
        "miss_count": volume.miss_count,
        "raw_faces": int(len(mesh_raw.faces)),
        "clean_faces": int(len(mesh.faces)),
    }
    (fused_dir / "fusion_meta.json").write_text(json.dumps(meta, indent=2))
    outputs = [fused_dir / "mesh.ply", fused_dir / "mesh_raw.ply", fused_dir / "fusion_meta.json"]
    if config.fusion.save_volume:
        fusion.save_volume(fused_dir / "volume.tsdfvol", volume)
        outputs.append(fused_dir / "volume.tsdfvol")
    return [str(p.relative_to(outdir)) for p in outputs], volume.miss_count


def oracle_ground_truth(config: PipelineConfig, outdir: Path) -> evaluation.PointCloud:
    """Ground-truth cloud from the analytic renders: range-gated exact depth
    pixels (subsampled by eval.gt_stride), unprojected into the world."""
    frames = _load_frames(config)
    rig_table = _load_rig_table(outdir)
    stride = max(1, config.eval.gt_stride)
    chunks = []
    for frame in frames:
        path = _require(
            outdir / "renders" / f"oracle_depth_{frame.frame_id}.pfm",
            f"oracle depth for frame {frame.frame_id}",
        )
        depth = load_pfm(path)[::stride, ::stride]
        baseline = rig_table[frame.frame_id][1]
        keep = (depth >= stereo.DEPTH_RANGE_NEAR * baseline) & (
            depth <= stereo.DEPTH_RANGE_FAR * baseline
        )
        if not keep.any():
            continue
        vs, us = np.nonzero(keep)
        pts = unproject_pixels(
            frame.intrinsics, frame.pose, us * stride, vs * stride, depth[keep]
        )
        chunks.append(pts)
    if not chunks:
        raise StageError("oracle ground truth is empty after range gating")
    return evaluation.PointCloud(np.concatenate(chunks))


def stage_eval(config: PipelineConfig, outdir: Path) -> tuple[list[str], int]:
    """Score the fused mesh against ground truth and emit the report."""
    mesh_path = _require(outdir / "fused" / "mesh.ply", "fused mesh (run fuse first)")
    mesh = load_mesh_ply(mesh_path)
    if mesh.is_empty:
        raise StageError("empty prediction: fused mesh has no faces")
    pred = evaluation.sample_mesh(mesh, config.eval.sample_points, config.run.seed)

    if config.eval.gt_cloud:
        gt_mesh = load_mesh_ply(_require(Path(config.eval.gt_cloud), "ground-truth PLY"))
        if len(gt_mesh.faces):
            gt = evaluation.sample_mesh(gt_mesh, config.eval.sample_points, config.run.seed + 1)
        else:
            gt = evaluation.PointCloud(gt_mesh.vertices)
    elif config.scene.source == "analytic":
        gt = oracle_ground_truth(config, outdir)
    else:
        raise InputError("no ground truth: set eval.gt_cloud or use an analytic scene")

    icp_rmse = 0.0
    if config.eval.icp:
        # fit the alignment on a strided subsample, apply it to all points
        stride = max(1, len(pred) // max(1, config.eval.icp_max_points))
        fit_src = evaluation.PointCloud(pred.points[::stride])
        result = evaluation.icp_align(fit_src, gt)
        pred = evaluation.PointCloud(result.transform.apply(pred.points))
        icp_rmse = result.rmse

    if config.eval.tau == "auto":
        meta_path = _require(outdir / "fused" / "fusion_meta.json", "fusion metadata")
        tau = 2.0 * json.loads(meta_path.read_text())["voxel_size"]
    else:
        tau = float(config.eval.tau)

    report = evaluation.score(
        pred,
        gt,
        tau=tau,
        radius_small=config.eval.radius_small,
        radius_large=config.eval.radius_large,
        icp_rmse=icp_rmse,
    )
    eval_dir = outdir / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    evaluation.save_report(eval_dir / "report.json", report)
    logger.info("F1 %.4f at tau %.5f, chamfer %.5f", report.f1, tau, report.chamfer)
    return [str((eval_dir / "report.json").relative_to(outdir))], 0


STAGES = {
    "render": stage_render,
    "match": stage_match,
    "segment": stage_segment,
    "fuse": stage_fuse,
    "eval": stage_eval,
}


# ---------------------------------------------------------------------------
# Manifest and orchestration
# ---------------------------------------------------------------------------

def _load_manifest(outdir: Path) -> dict:
    path = outdir / MANIFEST_NAME
    if path.exists():
        return json.loads(path.read_text())
    return {"stages": {}}


def _save_manifest(outdir: Path, manifest: dict) -> None:
    (outdir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))


def _stage_is_current(entry: dict | None, config_hash: str, outdir: Path) -> bool:
    if not entry or entry.get("config_hash") != config_hash:
        return False
    for rel, digest in entry.get("outputs", {}).items():
        path = outdir / rel
        if not path.exists() or _hash_file(path) != digest:
            return False
    return True


def run_stage(name: str, config: PipelineConfig, outdir: Path, force: bool = True) -> None:
    """Run one stage and record it in the manifest.

    With force=False the stage is skipped when the manifest shows it already
    ran under the same config and its outputs are intact.
    """
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = _load_manifest(outdir)
    config_hash = config.hash()
    if not force and _stage_is_current(manifest["stages"].get(name), config_hash, outdir):
        logger.info("stage %s up to date, skipping", name)
        return
    logger.info("stage %s: running", name)
    start = time.perf_counter()
    outputs, warnings = STAGES[name](config, outdir)
    elapsed = time.perf_counter() - start
    manifest["stages"][name] = {
        "config_hash": config_hash,
        "elapsed_s": round(elapsed, 3),
        "warnings": warnings,
        "outputs": {rel: _hash_file(outdir / rel) for rel in outputs},
    }
    _save_manifest(outdir, manifest)
    logger.info("stage %s: done in %.1fs (%d warnings)", name, elapsed, warnings)


def run_pipeline(config: PipelineConfig, resume: bool = True) -> Path:
    """Chain all stages; completed stages are skipped when resume is on."""
    outdir = Path(config.scene.output_dir)
    order = ["render", "match"]
    if config.segmentation.enabled:
        order.append("segment")
    order.append("fuse")
    if config.eval.gt_cloud or config.scene.source == "analytic":
        order.append("eval")
    else:
        logger.info("no ground truth configured; skipping eval stage")
    for name in order:
        run_stage(name, config, outdir, force=not resume)
    return outdir

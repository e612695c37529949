"""TSDF integration of masked RGB-D frames and colored mesh extraction.

The volume is a dense grid of projective (view-ray) truncated signed
distances with running weighted averages for both distance and color.
Marching cubes runs only over observed voxels; vertex colors come from
trilinear interpolation of the color accumulators.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from scipy import ndimage, sparse
from scipy.sparse.csgraph import connected_components
from skimage import measure

from .camera import unproject_pixels
from .mesh import TriangleMesh
from .stereo import DepthFrame, depth_error_bound

logger = logging.getLogger(__name__)

DEFAULT_WEIGHT_CAP = 128.0
MIN_EXTRACT_WEIGHT = 1.0


class FusionError(ValueError):
    """Raised for invalid volume construction or integration inputs."""


@dataclass
class TsdfVolume:
    """Dense TSDF grid. ``tsdf`` stores distance/truncation in [-1, 1];
    voxel (i, j, k) is centered at origin + (i, j, k) * voxel_size."""

    origin: np.ndarray  # (3,) center of voxel (0, 0, 0)
    voxel_size: float
    dims: tuple[int, int, int]
    truncation: float
    weight_cap: float = DEFAULT_WEIGHT_CAP
    tsdf: np.ndarray = None  # (nx, ny, nz) float64
    weight: np.ndarray = None
    color: np.ndarray = None  # (nx, ny, nz, 3) float64, averaged 0..255
    miss_count: int = 0  # frames whose projection missed the volume entirely

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise FusionError("voxel_size must be positive")
        if self.truncation < 2 * self.voxel_size:
            raise FusionError("truncation must be at least 2 * voxel_size")
        if any(d < 1 for d in self.dims):
            raise FusionError("volume dims must be positive")
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        nx, ny, nz = self.dims
        if self.tsdf is None:
            self.tsdf = np.ones((nx, ny, nz), dtype=np.float64)
        if self.weight is None:
            self.weight = np.zeros((nx, ny, nz), dtype=np.float64)
        if self.color is None:
            self.color = np.zeros((nx, ny, nz, 3), dtype=np.float64)


@njit(cache=True, nogil=True)
def _integrate_kernel(
    tsdf, weight, color, origin, voxel_size, rot, center,
    fx, fy, cx, cy, depth, valid, rgb, truncation, weight_cap,
):
    nx, ny, nz = tsdf.shape
    height, width = depth.shape
    updated = 0
    for i in range(nx):
        px = origin[0] + i * voxel_size - center[0]
        for j in range(ny):
            py = origin[1] + j * voxel_size - center[1]
            for k in range(nz):
                pz = origin[2] + k * voxel_size - center[2]
                # camera coordinates: R^T (p - c)
                zc = rot[0, 2] * px + rot[1, 2] * py + rot[2, 2] * pz
                if zc <= 0.0:
                    continue
                xc = rot[0, 0] * px + rot[1, 0] * py + rot[2, 0] * pz
                yc = rot[0, 1] * px + rot[1, 1] * py + rot[2, 1] * pz
                u = int(round(fx * xc / zc + cx))
                v = int(round(fy * yc / zc + cy))
                if u < 0 or u >= width or v < 0 or v >= height:
                    continue
                if not valid[v, u]:
                    continue
                sdf = depth[v, u] - zc
                if sdf < -truncation:
                    continue
                t = sdf / truncation
                if t > 1.0:
                    t = 1.0
                w_old = weight[i, j, k]
                w_new = w_old + 1.0
                tsdf[i, j, k] = (tsdf[i, j, k] * w_old + t) / w_new
                color[i, j, k, 0] = (color[i, j, k, 0] * w_old + rgb[v, u, 0]) / w_new
                color[i, j, k, 1] = (color[i, j, k, 1] * w_old + rgb[v, u, 1]) / w_new
                color[i, j, k, 2] = (color[i, j, k, 2] * w_old + rgb[v, u, 2]) / w_new
                weight[i, j, k] = min(w_new, weight_cap)
                updated += 1
    return updated


def integrate(volume: TsdfVolume, frame: DepthFrame, rgb: np.ndarray) -> int:
    """Fuse one RGB-D frame into the volume; returns the updated voxel count.

    Only final-valid pixels contribute; depth is sampled nearest-neighbor.
    Each observation carries weight 1 and the running weight is capped.
    """
    if frame.intrinsics is None or frame.pose is None:
        raise FusionError("depth frame carries no camera")
    intr = frame.intrinsics
    if rgb.shape[:2] != frame.depth.shape:
        raise FusionError("rgb and depth dimensions differ")
    updated = _integrate_kernel(
        volume.tsdf, volume.weight, volume.color,
        volume.origin, volume.voxel_size,
        frame.pose.rotation, frame.pose.center,
        intr.fx, intr.fy, intr.cx, intr.cy,
        frame.depth.astype(np.float64), frame.final_valid,
        rgb.astype(np.float64), volume.truncation, volume.weight_cap,
    )
    if updated == 0:
        volume.miss_count += 1
        logger.warning("frame projection missed the volume entirely")
    return updated


def fit_volume(
    frames: list[DepthFrame],
    voxel_size: float | None = None,
    grid_resolution: int | None = None,
    truncation: float | None = None,
    lr_threshold: float = 1.0,
    weight_cap: float = DEFAULT_WEIGHT_CAP,
) -> TsdfVolume:
    """Size a volume around all final-valid depth samples, padded by twice
    the truncation. Exactly one of voxel_size / grid_resolution must be given;
    with grid_resolution the longest axis gets about that many voxels."""
    if (voxel_size is None) == (grid_resolution is None):
        raise FusionError("specify exactly one of voxel_size or grid_resolution")
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    far_bound = 0.0
    for frame in frames:
        sel = frame.final_valid
        if not sel.any():
            continue
        vs, us = np.nonzero(sel)
        pts = unproject_pixels(frame.intrinsics, frame.pose, us, vs, frame.depth[sel])
        lo = np.minimum(lo, pts.min(axis=0))
        hi = np.maximum(hi, pts.max(axis=0))
        bound = depth_error_bound(
            10.0 * frame.baseline, lr_threshold, frame.intrinsics.fx, frame.baseline
        )
        far_bound = max(far_bound, float(bound))
    if not np.isfinite(lo).all():
        raise FusionError("no valid depth samples to bound the volume")
    extent = hi - lo
    if voxel_size is None:
        # two passes so the truncation padding fits inside the resolution
        voxel_size = float(extent.max()) / grid_resolution
        trunc_guess = truncation if truncation is not None else max(4.0 * voxel_size, far_bound)
        voxel_size = (float(extent.max()) + 4.0 * max(trunc_guess, 2 * voxel_size)) / grid_resolution
    if truncation is None:
        truncation = max(4.0 * voxel_size, far_bound)
    truncation = max(truncation, 2 * voxel_size)
    pad = 2.0 * truncation
    origin = lo - pad
    dims = tuple(int(np.ceil((hi[a] + pad - origin[a]) / voxel_size)) + 1 for a in range(3))
    return TsdfVolume(
        origin=origin, voxel_size=voxel_size, dims=dims,
        truncation=truncation, weight_cap=weight_cap,
    )


def extract_mesh(volume: TsdfVolume, min_weight: float = MIN_EXTRACT_WEIGHT) -> TriangleMesh:
    """Marching cubes over observed voxels (weight >= min_weight).

    Vertex positions interpolate the tsdf linearly along crossing edges;
    vertex colors interpolate the color accumulators trilinearly. A volume
    with no zero crossing yields an empty mesh.
    """
    observed = volume.weight >= min_weight
    nx, ny, nz = volume.dims
    if min(nx, ny, nz) < 2 or not observed.any():
        return TriangleMesh.empty()
    # process only cells whose 8 corners are all observed, so no face can
    # reference unobserved tsdf values (skimage gates each cell on the
    # mask entry at its far corner)
    cell_ok = np.ones((nx - 1, ny - 1, nz - 1), dtype=bool)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                cell_ok &= observed[dx : dx + nx - 1, dy : dy + ny - 1, dz : dz + nz - 1]
    mask = np.zeros_like(observed)
    mask[1:, 1:, 1:] = cell_ok
    if not mask.any():
        return TriangleMesh.empty()
    try:
        verts_idx, faces, _, _ = measure.marching_cubes(
            volume.tsdf, level=0.0, mask=mask, gradient_direction="ascent"
        )
    except (ValueError, RuntimeError):
        return TriangleMesh.empty()
    coords = verts_idx.T
    channels = [
        ndimage.map_coordinates(volume.color[..., c], coords, order=1, mode="nearest")
        for c in range(3)
    ]
    colors = np.clip(np.stack(channels, axis=1), 0.0, 255.0).round().astype(np.uint8)
    vertices = volume.origin + verts_idx * volume.voxel_size
    return TriangleMesh(vertices=vertices, colors=colors, faces=faces.astype(np.int32))


def clean_mesh(mesh: TriangleMesh, min_triangles: int) -> TriangleMesh:
    """Drop connected components (by shared vertices) with fewer than
    min_triangles faces, and reindex the remaining vertices."""
    if mesh.is_empty or min_triangles <= 0:
        return mesh
    n = len(mesh.vertices)
    edges = np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]], mesh.faces[:, [2, 0]]])
    graph = sparse.coo_matrix(
        (np.ones(len(edges), dtype=np.int8), (edges[:, 0], edges[:, 1])), shape=(n, n)
    )
    _, labels = connected_components(graph, directed=False)
    face_labels = labels[mesh.faces[:, 0]]
    counts = np.bincount(face_labels, minlength=labels.max() + 1)
    keep_faces = counts[face_labels] >= min_triangles
    faces = mesh.faces[keep_faces]
    used = np.unique(faces)
    remap = np.full(n, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(
        vertices=mesh.vertices[used],
        colors=mesh.colors[used],
        faces=remap[faces],
    )


# ---------------------------------------------------------------------------
# Volume checkpoints
# ---------------------------------------------------------------------------

def save_volume(path: str | Path, volume: TsdfVolume) -> None:
    """Checkpoint: text header followed by raw little-endian float64 arrays
    (tsdf, weight, color) in C order."""
    ox, oy, oz = volume.origin
    header = (
        "tsdfvolume 1\n"
        f"origin {ox:.17g} {oy:.17g} {oz:.17g}\n"
        f"voxel_size {volume.voxel_size:.17g}\n"
        f"dims {volume.dims[0]} {volume.dims[1]} {volume.dims[2]}\n"
        f"truncation {volume.truncation:.17g}\n"
        f"weight_cap {volume.weight_cap:.17g}\n"
        "end_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(volume.tsdf.astype("<f8").tobytes())
        f.write(volume.weight.astype("<f8").tobytes())
        f.write(volume.color.astype("<f8").tobytes())


def load_volume(path: str | Path) -> TsdfVolume:
    with open(path, "rb") as f:
        if f.readline().strip() != b"tsdfvolume 1":
            raise FusionError(f"{path}: not a volume checkpoint")
        fields = {}
        while True:
            line = f.readline().decode("ascii").strip()
            if line == "end_header":
                break
            key, *vals = line.split()
            fields[key] = vals
        dims = tuple(int(x) for x in fields["dims"])
        count = dims[0] * dims[1] * dims[2]
        tsdf = np.frombuffer(f.read(count * 8), dtype="<f8").reshape(dims).copy()
        weight = np.frombuffer(f.read(count * 8), dtype="<f8").reshape(dims).copy()
        color = np.frombuffer(f.read(count * 3 * 8), dtype="<f8").reshape(dims + (3,)).copy()
    return TsdfVolume(
        origin=np.array([float(x) for x in fields["origin"]]),
        voxel_size=float(fields["voxel_size"][0]),
        dims=dims,
        truncation=float(fields["truncation"][0]),
        weight_cap=float(fields["weight_cap"][0]),
        tsdf=tsdf,
        weight=weight,
        color=color,
    )

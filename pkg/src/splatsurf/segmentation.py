"""Geometric propagation of an object mask across a frame sequence.

Masked depth pixels are unprojected, carried into the next camera, splatted
into 3x3 pixel neighborhoods, dilated, and reseeded by farthest point
sampling. A pluggable refiner then turns the dilated proposal into the
stored mask; the default identity refiner passes it through, and the
external refiner round-trips through files so an out-of-process model can
be attached.
"""

from __future__ import annotations

import logging
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy import ndimage

from .camera import Intrinsics, Pose, project_points, unproject_pixels
from .imgio import load_mask_png, save_mask_png, save_png
from .stereo import DepthFrame

logger = logging.getLogger(__name__)

DEFAULT_DILATION_RADIUS = 10
DEFAULT_NUM_SEEDS = 5


class SegmentationError(ValueError):
    """Raised for invalid tracking inputs."""


class Refiner(Protocol):
    def __call__(self, image: np.ndarray, mask: np.ndarray, seeds: np.ndarray) -> np.ndarray: ...


def identity_refiner(image: np.ndarray, mask: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    return mask


@dataclass
class ExternalRefiner:
    """File-exchange refiner: per frame, writes ``image.png``, ``seeds.txt``
    (one ``u v`` pair per line) and ``proposal.png`` (the dilated projected
    mask) into the exchange directory, runs the command with the directory as
    its final argument, and reads back ``mask.png``."""

    command: list[str]
    exchange_dir: Path

    def __call__(self, image: np.ndarray, mask: np.ndarray, seeds: np.ndarray) -> np.ndarray:
        d = Path(self.exchange_dir)
        d.mkdir(parents=True, exist_ok=True)
        save_png(d / "image.png", image)
        save_mask_png(d / "proposal.png", mask)
        save_seeds(d / "seeds.txt", seeds)
        result = d / "mask.png"
        if result.exists():
            result.unlink()
        subprocess.run([*self.command, str(d)], check=True)
        if not result.exists():
            raise SegmentationError(f"external refiner produced no {result}")
        out = load_mask_png(result)
        if out.shape != mask.shape:
            raise SegmentationError("refiner mask dimensions differ from input")
        return out


@dataclass
class MaskTrack:
    masks: list[np.ndarray] = field(default_factory=list)
    seeds: list[np.ndarray] = field(default_factory=list)  # (k, 2) of (u, v)
    lost_at: int | None = None  # frame index where propagation died, if any


def propagate_mask(
    mask: np.ndarray,
    depth: DepthFrame,
    cam_from: tuple[Intrinsics, Pose],
    cam_to: tuple[Intrinsics, Pose],
) -> np.ndarray:
    """Carry a mask from one camera into another via its depth.

    Every masked pixel with final-valid depth is unprojected, transformed,
    projected into the target view, and splatted into a 3x3 neighborhood.
    Returns an empty mask (and logs) when no masked pixel has valid depth.
    """
    intr_i, pose_i = cam_from
    intr_j, pose_j = cam_to
    out = np.zeros((intr_j.height, intr_j.width), dtype=bool)
    sel = mask & depth.final_valid
    if not sel.any():
        logger.warning("mask propagation found no valid depth under the mask")
        return out
    vs, us = np.nonzero(sel)
    points = unproject_pixels(intr_i, pose_i, us, vs, depth.depth[sel])
    u, v, z = project_points(intr_j, pose_j, points)
    front = z > 0
    ui = np.rint(u[front]).astype(np.int64)
    vi = np.rint(v[front]).astype(np.int64)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            uu = ui + dx
            vv = vi + dy
            ok = (uu >= 0) & (uu < intr_j.width) & (vv >= 0) & (vv < intr_j.height)
            out[vv[ok], uu[ok]] = True
    return out


def disc_element(radius: int) -> np.ndarray:
    """Disc structuring element: offsets with Euclidean norm <= radius."""
    if radius < 0:
        raise SegmentationError("dilation radius must be >= 0")
    span = np.arange(-radius, radius + 1)
    yy, xx = np.meshgrid(span, span, indexing="ij")
    return (yy * yy + xx * xx) <= radius * radius


def dilate(mask: np.ndarray, radius_px: int) -> np.ndarray:
    """Morphological dilation with a disc of the given radius (0 = identity)."""
    if radius_px == 0:
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=disc_element(radius_px))


def select_seeds_fps(mask: np.ndarray, k: int) -> np.ndarray:
    """Farthest point sampling over mask pixels; returns (k, 2) of (u, v).

    The first seed is the mask pixel nearest the mask centroid; each next
    seed maximizes the minimum distance to the chosen ones. All ties break
    in row-major pixel order, so the result is independent of storage order.
    If k exceeds the pixel count, all mask pixels are returned.
    """
    if k < 1:
        raise SegmentationError("seed count must be >= 1")
    pix = np.argwhere(mask)  # (n, 2) of (row, col), row-major
    n = len(pix)
    if n == 0:
        raise SegmentationError("cannot sample seeds from an empty mask")
    if k >= n:
        return pix[:, ::-1].copy()
    centroid = pix.mean(axis=0)
    d2_centroid = ((pix - centroid) ** 2).sum(axis=1)
    chosen = [int(np.argmin(d2_centroid))]
    # squared integer distances keep tie handling exact
    d2 = ((pix - pix[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        cand = ((pix - pix[nxt]) ** 2).sum(axis=1)
        np.minimum(d2, cand, out=d2)
    return pix[chosen][:, ::-1]


def track_object(
    frames: list[np.ndarray],
    depths: list[DepthFrame],
    cameras: list[tuple[Intrinsics, Pose]],
    initial_mask: np.ndarray,
    refiner: Refiner = identity_refiner,
    dilation_radius: int = DEFAULT_DILATION_RADIUS,
    num_seeds: int = DEFAULT_NUM_SEEDS,
) -> MaskTrack:
    """Propagate the initial mask through the sequence, strictly causally.

    Per consecutive frame: propagate via the previous frame's depth, dilate,
    pick FPS seeds, refine, store. An empty propagated mask marks the track
    lost; all subsequent masks are empty.
    """
    if not (len(frames) == len(depths) == len(cameras)):
        raise SegmentationError("frames, depths, and cameras must align")
    if initial_mask.shape != frames[0].shape[:2]:
        raise SegmentationError("initial mask does not match frame 0")
    track = MaskTrack()
    track.masks.append(initial_mask.astype(bool))
    track.seeds.append(
        select_seeds_fps(initial_mask, num_seeds) if initial_mask.any() else np.zeros((0, 2), np.int64)
    )
    for j in range(1, len(frames)):
        if track.lost_at is not None:
            track.masks.append(np.zeros(frames[j].shape[:2], dtype=bool))
            track.seeds.append(np.zeros((0, 2), np.int64))
            continue
        projected = propagate_mask(track.masks[j - 1], depths[j - 1], cameras[j - 1], cameras[j])
        if not projected.any():
            logger.warning("track lost at frame %d", j)
            track.lost_at = j
            track.masks.append(projected)
            track.seeds.append(np.zeros((0, 2), np.int64))
            continue
        dilated = dilate(projected, dilation_radius)
        seeds = select_seeds_fps(dilated, num_seeds)
        refined = refiner(frames[j], dilated, seeds)
        track.masks.append(refined.astype(bool))
        track.seeds.append(seeds)
    return track


def save_seeds(path: str | Path, seeds: np.ndarray) -> None:
    Path(path).write_text("".join(f"{u} {v}\n" for u, v in seeds))


def load_seeds(path: str | Path) -> np.ndarray:
    rows = [
        tuple(int(x) for x in line.split())
        for line in Path(path).read_text().splitlines()
        if line.strip()
    ]
    return np.array(rows, dtype=np.int64).reshape(-1, 2)

"""Disparity estimation on rectified pairs, occlusion masking, and depth gating.

The matcher is census + semi-global aggregation: a 5x7 census transform with
Hamming matching costs, scanline aggregation along 4 or 8 directions with the
usual P1/P2 smoothness penalties, winner-take-all with a uniqueness check, and
parabola subpixel refinement. Ties break toward the smaller disparity. The
right-based map is computed by horizontally mirroring both images and reusing
the left-based path.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import ceil

import numpy as np
from numba import njit

from .camera import Intrinsics, Pose

CENSUS_ROWS = 5
CENSUS_COLS = 7
MIN_DISPARITY = 1e-3  # px; disparities below this give no finite depth
MAX_DISPARITY_CAP = 256

DEPTH_RANGE_NEAR = 2.0  # gate: keep depths in [near*B, far*B]
DEPTH_RANGE_FAR = 10.0

_DIRECTIONS_8 = np.array(
    [(0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1)],
    dtype=np.int64,
)


class StereoError(ValueError):
    """Raised for invalid matcher inputs or parameters."""


@dataclass(frozen=True)
class StereoParams:
    """Matcher configuration; the census window is fixed at 5x7."""

    max_disparity: int
    p1: int = 8
    p2: int = 96
    num_paths: int = 8
    lr_threshold: float = 1.0
    uniqueness_ratio: float = 0.95

    def __post_init__(self):
        if self.max_disparity < 1:
            raise StereoError("max_disparity must be >= 1")
        if not (0 < self.p1 <= self.p2):
            raise StereoError("penalties must satisfy P2 >= P1 > 0")
        if self.num_paths not in (0, 4, 8):
            raise StereoError("num_paths must be 0 (off), 4, or 8")
        if self.lr_threshold <= 0:
            raise StereoError("lr_threshold must be positive")
        if not (0 < self.uniqueness_ratio <= 1):
            raise StereoError("uniqueness_ratio must be in (0, 1]")

    @staticmethod
    def for_camera(intr: Intrinsics, **overrides) -> "StereoParams":
        """Defaults with the disparity range sized for the near gate.

        The nearest admissible depth is 2B, where disparity is fx*B/(2B) =
        fx/2, so that is the default search limit (capped at 256).
        """
        max_d = min(ceil(intr.fx / 2.0), MAX_DISPARITY_CAP)
        return StereoParams(max_disparity=max_d, **overrides)


@dataclass
class DisparityMap:
    values: np.ndarray  # (H, W) float32, 0 where invalid
    valid: np.ndarray  # (H, W) bool
    max_disparity: int


@dataclass
class DepthFrame:
    """Metric depth with its validity, occlusion, and range masks."""

    depth: np.ndarray  # (H, W) float32
    valid: np.ndarray  # (H, W) bool
    occluded: np.ndarray  # (H, W) bool, True where the cross-check failed
    in_range: np.ndarray  # (H, W) bool, True inside [2B, 10B]
    baseline: float
    intrinsics: Intrinsics | None = None
    pose: Pose | None = None

    @property
    def final_valid(self) -> np.ndarray:
        return self.valid & ~self.occluded & self.in_range


def to_gray(image: np.ndarray) -> np.ndarray:
    """RGB uint8 (or already-gray) image to float32 luma."""
    img = np.asarray(image)
    if img.ndim == 2:
        return img.astype(np.float32)
    return (
        0.299 * img[..., 0].astype(np.float32)
        + 0.587 * img[..., 1].astype(np.float32)
        + 0.114 * img[..., 2].astype(np.float32)
    )


def census_transform(gray: np.ndarray) -> np.ndarray:
    """5x7 census descriptor per pixel (34 neighbor-less-than-center bits).

    Window neighbors are visited in row-major order; the image border is
    edge-replicated.
    """
    g = np.asarray(gray, dtype=np.float32)
    ry, rx = CENSUS_ROWS // 2, CENSUS_COLS // 2
    padded = np.pad(g, ((ry, ry), (rx, rx)), mode="edge")
    h, w = g.shape
    out = np.zeros((h, w), dtype=np.uint64)
    for dy in range(CENSUS_ROWS):
        for dx in range(CENSUS_COLS):
            if dy == ry and dx == rx:
                continue
            nb = padded[dy : dy + h, dx : dx + w]
            out = (out << np.uint64(1)) | (nb < g).astype(np.uint64)
    return out


def census_cost_volume(census_left: np.ndarray, census_right: np.ndarray, max_disparity: int) -> np.ndarray:
    """Hamming-cost volume over d in [0, max_disparity].

    Off-image lookups (x - d < 0) clamp to the leftmost right-image column;
    matches there are geometrically impossible and are invalidated after WTA,
    but clamping keeps the volume free of artificial cost walls that would
    leak through the scanline aggregation.
    """
    h, w = census_left.shape
    d_levels = max_disparity + 1
    cost = np.empty((h, w, d_levels), dtype=np.uint8)
    for d in range(d_levels):
        diff = census_left[:, d:] ^ census_right[:, : w - d]
        cost[:, d:, d] = np.bitwise_count(diff).astype(np.uint8)
        if d > 0:
            clamped = census_left[:, :d] ^ census_right[:, :1]
            cost[:, :d, d] = np.bitwise_count(clamped).astype(np.uint8)
    return cost


@njit(cache=True, nogil=True)
def _aggregate(cost, directions, p1, p2):
    h, w, d_levels = cost.shape
    agg = np.zeros((h, w, d_levels), dtype=np.int32)
    lbuf = np.empty((h, w, d_levels), dtype=np.int32)
    for di in range(directions.shape[0]):
        dy = directions[di, 0]
        dx = directions[di, 1]
        y_start, y_stop, y_step = (0, h, 1) if dy >= 0 else (h - 1, -1, -1)
        x_start, x_stop, x_step = (0, w, 1) if dx >= 0 else (w - 1, -1, -1)
        for y in range(y_start, y_stop, y_step):
            for x in range(x_start, x_stop, x_step):
                py = y - dy
                px = x - dx
                if 0 <= py < h and 0 <= px < w:
                    minprev = lbuf[py, px, 0]
                    for k in range(1, d_levels):
                        if lbuf[py, px, k] < minprev:
                            minprev = lbuf[py, px, k]
                    for k in range(d_levels):
                        best = lbuf[py, px, k]
                        if k > 0 and lbuf[py, px, k - 1] + p1 < best:
                            best = lbuf[py, px, k - 1] + p1
                        if k + 1 < d_levels and lbuf[py, px, k + 1] + p1 < best:
                            best = lbuf[py, px, k + 1] + p1
                        if minprev + p2 < best:
                            best = minprev + p2
                        lbuf[y, x, k] = cost[y, x, k] + best - minprev
                else:
                    for k in range(d_levels):
                        lbuf[y, x, k] = cost[y, x, k]
        agg += lbuf
    return agg


def _winner_take_all(agg: np.ndarray, uniqueness_ratio: float) -> tuple[np.ndarray, np.ndarray]:
    """WTA with lowest-disparity tie break, strict uniqueness rejection, and
    parabola subpixel refinement."""
    h, w, d_levels = agg.shape
    d0 = np.argmin(agg, axis=2)
    c0 = np.take_along_axis(agg, d0[..., None], axis=2)[..., 0].astype(np.float64)

    work = agg.astype(np.float64)
    for off in (-1, 0, 1):
        idx = np.clip(d0 + off, 0, d_levels - 1)
        np.put_along_axis(work, idx[..., None], np.inf, axis=2)
    c2 = work.min(axis=2)
    valid = c0 < uniqueness_ratio * c2

    interior = (d0 > 0) & (d0 < d_levels - 1)
    cm = np.take_along_axis(agg, np.clip(d0 - 1, 0, d_levels - 1)[..., None], axis=2)[..., 0].astype(np.float64)
    cp = np.take_along_axis(agg, np.clip(d0 + 1, 0, d_levels - 1)[..., None], axis=2)[..., 0].astype(np.float64)
    denom = cm + cp - 2.0 * c0
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(interior & (denom > 0), 0.5 * (cm - cp) / denom, 0.0)
    delta = np.clip(delta, -0.5, 0.5)

    # a match at disparity d needs a right-image pixel at x - d
    xs = np.arange(w)[None, :]
    valid &= d0 <= xs

    values = (d0 + delta).astype(np.float32)
    values[~valid] = 0.0
    return values, valid


def _match_one(gray_left: np.ndarray, gray_right: np.ndarray, params: StereoParams) -> DisparityMap:
    census_l = census_transform(gray_left)
    census_r = census_transform(gray_right)
    cost = census_cost_volume(census_l, census_r, params.max_disparity)
    if params.num_paths == 0:
        agg = cost.astype(np.int32)
    else:
        dirs = _DIRECTIONS_8[: params.num_paths]
        agg = _aggregate(cost, dirs, params.p1, params.p2)
    values, valid = _winner_take_all(agg, params.uniqueness_ratio)
    return DisparityMap(values=values, valid=valid, max_disparity=params.max_disparity)


def match_sgm(left: np.ndarray, right: np.ndarray, params: StereoParams) -> tuple[DisparityMap, DisparityMap]:
    """Match a rectified pair; returns (left-based, right-based) disparity maps.

    Sign conventions: both maps store nonnegative disparities. The left-based
    map matches left pixel (u, v) to right pixel (u - d, v); the right-based
    map matches right pixel (u, v) to left pixel (u + d, v). The right map
    comes from mirroring both images horizontally and rerunning the
    left-based matcher.
    """
    if left.shape != right.shape:
        raise StereoError(f"image dimensions differ: {left.shape} vs {right.shape}")
    width = left.shape[1]
    if params.max_disparity >= width:
        raise StereoError(
            f"max_disparity {params.max_disparity} must be below image width {width}"
        )
    gray_l = to_gray(left)
    gray_r = to_gray(right)
    disp_left = _match_one(gray_l, gray_r, params)
    mirrored = _match_one(gray_r[:, ::-1], gray_l[:, ::-1], params)
    disp_right = DisparityMap(
        values=np.ascontiguousarray(mirrored.values[:, ::-1]),
        valid=np.ascontiguousarray(mirrored.valid[:, ::-1]),
        max_disparity=params.max_disparity,
    )
    return disp_left, disp_right


def occlusion_mask(disp_left: DisparityMap, disp_right: DisparityMap, lr_threshold: float) -> np.ndarray:
    """Left-right cross check; True marks occluded/inconsistent pixels.

    A pixel is occluded iff its right-image lookup leaves the image, either
    map is invalid at the corresponding position, or the two disparities
    disagree by more than the threshold.
    """
    if disp_left.values.shape != disp_right.values.shape:
        raise StereoError("disparity map dimensions differ")
    h, w = disp_left.values.shape
    us = np.arange(w)[None, :]
    lookup = us - np.rint(disp_left.values).astype(np.int64)
    inside = (lookup >= 0) & (lookup < w)
    lookup_c = np.clip(lookup, 0, w - 1)
    rows = np.arange(h)[:, None]
    right_vals = disp_right.values[rows, lookup_c]
    right_ok = disp_right.valid[rows, lookup_c]
    consistent = (
        disp_left.valid
        & inside
        & right_ok
        & (np.abs(disp_left.values - right_vals) <= lr_threshold)
    )
    return ~consistent


def disparity_to_depth(
    disp: DisparityMap,
    fx: float,
    baseline: float,
    intrinsics: Intrinsics | None = None,
    pose: Pose | None = None,
) -> DepthFrame:
    """Z = fx * B / d; disparities at or below the guard are invalid."""
    if fx <= 0 or baseline <= 0:
        raise StereoError("fx and baseline must be positive")
    usable = disp.valid & (disp.values > MIN_DISPARITY)
    with np.errstate(divide="ignore"):
        depth = np.where(usable, fx * baseline / disp.values, 0.0).astype(np.float32)
    shape = disp.values.shape
    return DepthFrame(
        depth=depth,
        valid=usable,
        occluded=np.zeros(shape, dtype=bool),
        in_range=np.ones(shape, dtype=bool),
        baseline=baseline,
        intrinsics=intrinsics,
        pose=pose,
    )


def depth_range_mask(frame: DepthFrame, baseline: float) -> np.ndarray:
    """True where depth lies inside the closed interval [2B, 10B]."""
    if baseline <= 0:
        raise StereoError("baseline must be positive")
    return (frame.depth >= DEPTH_RANGE_NEAR * baseline) & (
        frame.depth <= DEPTH_RANGE_FAR * baseline
    )


def depth_error_bound(z, eps_d: float, fx: float, baseline: float):
    """Depth error implied by a disparity error eps_d: eps_d * Z^2 / (fx * B)."""
    return eps_d * np.square(z) / (fx * baseline)


def apply_masks(frame: DepthFrame, occluded: np.ndarray) -> DepthFrame:
    """Return a copy of the frame with the occlusion and range masks set."""
    return replace(frame, occluded=occluded, in_range=depth_range_mask(frame, frame.baseline))

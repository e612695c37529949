"""Camera models, pose algebra, and virtual stereo rig construction.

Convention: camera-to-world rotation plus camera center, +x right, +y down,
+z forward. All file ingestion converts into this convention at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_BASELINE_FRACTION = 0.07
MAX_BASELINE_FRACTION = 0.07


class CameraError(ValueError):
    """Raised for invalid camera parameters or degenerate rig requests."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics shared by both eyes of a stereo rig."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise CameraError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise CameraError("principal point outside image")


@dataclass(frozen=True)
class Pose:
    """Camera pose: camera-to-world rotation and camera center in world units."""

    rotation: np.ndarray  # (3, 3)
    center: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise CameraError("rotation must be 3x3")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6):
            raise CameraError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise CameraError("rotation determinant must be +1")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "center", _frozen(c))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map world points (..., 3) into the camera frame."""
        p = np.asarray(points, dtype=np.float64)
        return (p - self.center) @ self.rotation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.center


@dataclass(frozen=True)
class StereoRig:
    """Stereo-calibrated pair: shared intrinsics and orientation, right eye
    displaced by the baseline along the left camera's local +x axis."""

    intrinsics: Intrinsics
    left: Pose
    right: Pose
    baseline: float


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Pose at ``eye`` with +z toward ``target`` (+x right, +y down)."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise CameraError("look_at target coincides with eye")
    forward = forward / norm
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-12:
        raise CameraError("look_at direction is parallel to up")
    right = right / rnorm
    down = np.cross(forward, right)
    return Pose(np.stack([right, down, forward], axis=1), eye)


def scene_radius(poses: list[Pose]) -> float:
    """Max distance of any camera center from the centroid of all centers."""
    if len(poses) < 2:
        raise CameraError("insufficient poses: scene radius needs at least 2")
    centers = np.stack([p.center for p in poses])
    centroid = centers.mean(axis=0)
    return float(np.linalg.norm(centers - centroid, axis=1).max())


def baseline_from_radius(
    radius: float,
    fraction: float = DEFAULT_BASELINE_FRACTION,
    max_fraction: float = MAX_BASELINE_FRACTION,
) -> float:
    """Stereo baseline as a fraction of the scene radius (default 7%)."""
    if radius <= 0:
        raise CameraError("scene radius must be positive")
    if fraction <= 0:
        raise CameraError("baseline fraction must be positive")
    if fraction > max_fraction:
        raise CameraError(
            f"baseline fraction {fraction} exceeds policy maximum {max_fraction}"
        )
    return radius * fraction


def make_stereo_rig(left: Pose, intr: Intrinsics, baseline: float) -> StereoRig:
    """Build the virtual rig: left eye kept at the input pose, right eye
    shifted by the baseline along the left camera's +x axis in the world."""
    if baseline <= 0:
        raise CameraError("baseline must be positive")
    x_axis_world = left.rotation[:, 0]
    right = Pose(left.rotation, left.center + baseline * x_axis_world)
    return StereoRig(intrinsics=intr, left=left, right=right, baseline=baseline)


def project(intr: Intrinsics, pose: Pose, point: np.ndarray) -> tuple[float, float, float]:
    """Project a world point; returns (u, v, camera-frame depth z)."""
    cam = pose.world_to_camera(np.asarray(point, dtype=np.float64).reshape(3))
    z = cam[2]
    if z <= 0:
        raise CameraError("point is behind camera")
    u = intr.fx * cam[0] / z + intr.cx
    v = intr.fy * cam[1] / z + intr.cy
    return float(u), float(v), float(z)


def unproject(intr: Intrinsics, pose: Pose, pixel: tuple[float, float], depth: float) -> np.ndarray:
    """Lift a pixel at the given camera-frame depth back to world coordinates."""
    if depth <= 0:
        raise CameraError("depth must be positive")
    u, v = pixel
    cam = np.array(
        [(u - intr.cx) / intr.fx * depth, (v - intr.cy) / intr.fy * depth, depth]
    )
    return pose.camera_to_world(cam)


def project_points(
    intr: Intrinsics, pose: Pose, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection of (N, 3) world points.

    Returns (u, v, z) arrays; callers must gate on z > 0 themselves.
    """
    cam = pose.world_to_camera(points)
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[:, 0] / z + intr.cx
        v = intr.fy * cam[:, 1] / z + intr.cy
    return u, v, z


def unproject_pixels(
    intr: Intrinsics, pose: Pose, u: np.ndarray, v: np.ndarray, depth: np.ndarray
) -> np.ndarray:
    """Vectorized unprojection of pixel arrays at given depths to (N, 3) world points."""
    x = (np.asarray(u, dtype=np.float64) - intr.cx) / intr.fx * depth
    y = (np.asarray(v, dtype=np.float64) - intr.cy) / intr.fy * depth
    cam = np.stack([x, y, np.asarray(depth, dtype=np.float64)], axis=-1)
    return pose.camera_to_world(cam)


# ---------------------------------------------------------------------------
# Camera file ingestion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Frame:
    """One ingested camera: id, intrinsics, and pose."""

    frame_id: str
    intrinsics: Intrinsics
    pose: Pose


def load_camera_file(path: str | Path) -> list[Frame]:
    """Read the plain-text camera file.

    One line per frame:
    ``frame_id fx fy cx cy width height r11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz``
    with a camera-to-world rotation (row-major) and the camera center.
    Lines starting with ``#`` are ignored.
    """
    frames = []
    path = Path(path)
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 19:
            raise CameraError(f"{path}:{lineno}: expected 19 fields, got {len(parts)}")
        frame_id = parts[0]
        vals = [float(x) for x in parts[1:]]
        intr = Intrinsics(
            fx=vals[0], fy=vals[1], cx=vals[2], cy=vals[3],
            width=int(vals[4]), height=int(vals[5]),
        )
        rot = np.array(vals[6:15]).reshape(3, 3)
        center = np.array(vals[15:18])
        frames.append(Frame(frame_id=frame_id, intrinsics=intr, pose=Pose(rot, center)))
    if not frames:
        raise CameraError(f"{path}: no camera frames found")
    return frames


def save_camera_file(path: str | Path, frames: list[Frame]) -> None:
    lines = ["# frame_id fx fy cx cy width height r11..r33 tx ty tz"]
    for f in frames:
        i = f.intrinsics
        rot = " ".join(f"{x:.17g}" for x in f.pose.rotation.ravel())
        ctr = " ".join(f"{x:.17g}" for x in f.pose.center)
        lines.append(
            f"{f.frame_id} {i.fx:.17g} {i.fy:.17g} {i.cx:.17g} {i.cy:.17g} "
            f"{i.width} {i.height} {rot} {ctr}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def quat_wxyz_to_rotation(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to a 3x3 rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def convert_colmap(cameras_txt: str | Path, images_txt: str | Path) -> list[Frame]:
    """Convert a COLMAP text model into camera frames.

    ``cameras.txt``: ``CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]`` with PINHOLE
    (fx fy cx cy) or SIMPLE_PINHOLE (f cx cy) models. ``images.txt``:
    ``IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME`` followed by a 2D-point
    line that is skipped. COLMAP stores world-to-camera extrinsics
    (x_cam = R x_world + t); they are inverted here.
    """
    cams: dict[str, Intrinsics] = {}
    for line in Path(cameras_txt).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        cam_id, model = parts[0], parts[1]
        width, height = int(parts[2]), int(parts[3])
        params = [float(x) for x in parts[4:]]
        if model == "PINHOLE":
            fx, fy, cx, cy = params[:4]
        elif model == "SIMPLE_PINHOLE":
            fx = fy = params[0]
            cx, cy = params[1], params[2]
        else:
            raise CameraError(f"unsupported COLMAP camera model {model!r}")
        cams[cam_id] = Intrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)

    frames = []
    lines = [
        ln.strip()
        for ln in Path(images_txt).read_text().splitlines()
        if ln.strip() and not ln.strip().startswith("#")
    ]
    for header in lines[0::2]:
        parts = header.split()
        if len(parts) < 10:
            raise CameraError(f"malformed COLMAP image line: {header!r}")
        qw, qx, qy, qz = (float(x) for x in parts[1:5])
        t = np.array([float(x) for x in parts[5:8]])
        cam_id, name = parts[8], parts[9]
        if cam_id not in cams:
            raise CameraError(f"image {name!r} references unknown camera {cam_id}")
        r_wc = quat_wxyz_to_rotation([qw, qx, qy, qz])
        rotation = r_wc.T  # camera-to-world
        center = -r_wc.T @ t
        frames.append(Frame(frame_id=name, intrinsics=cams[cam_id], pose=Pose(rotation, center)))
    if not frames:
        raise CameraError(f"{images_txt}: no images found")
    return frames

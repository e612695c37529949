"""Analytic primitive scenes rendered by ray casting.

This is the deterministic test oracle: every pixel carries exact metric
depth and the id of the primitive it hit. Shading uses a light that is
fixed in world space, so a surface point renders the same color from every
view (needed for stereo photo-consistency on the oracle).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..camera import Intrinsics, Pose
from .frame import RenderedFrame

# Fixed world-space light direction (toward the light) and ambient floor.
LIGHT_DIR = np.array([0.25, -0.4, 0.88])
LIGHT_DIR = LIGHT_DIR / np.linalg.norm(LIGHT_DIR)
AMBIENT = 0.35

_RAY_EPS = 1e-9

# Incommensurate directions for the procedural albedo pattern.
_TEX_D1 = np.array([3.0, 1.0, 2.0]) / np.sqrt(14.0)
_TEX_D2 = np.array([-1.0, 2.5, 1.5]) / np.linalg.norm([-1.0, 2.5, 1.5])
_TEX_D3 = np.array([2.0, -1.5, 2.5]) / np.linalg.norm([2.0, -1.5, 2.5])


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    albedo: tuple[float, float, float]
    texture: float = 0.0  # 0 = flat albedo, 1 = full pattern modulation
    texture_freq: float = 8.0  # pattern cycles per world unit

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")


@dataclass(frozen=True)
class Box:
    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]
    albedo: tuple[float, float, float]
    texture: float = 0.0
    texture_freq: float = 8.0

    def __post_init__(self):
        if not np.all(np.asarray(self.min_corner) < np.asarray(self.max_corner)):
            raise ValueError("box min must be strictly below max componentwise")


@dataclass(frozen=True)
class Plane:
    normal: tuple[float, float, float]
    offset: float  # plane equation: normal . x = offset
    albedo: tuple[float, float, float]
    texture: float = 0.0
    texture_freq: float = 8.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        if abs(np.linalg.norm(n) - 1.0) > 1e-6:
            raise ValueError("plane normal must be unit length")


Primitive = Sphere | Box | Plane


@dataclass
class AnalyticScene:
    primitives: list[Primitive] = field(default_factory=list)
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)


def _texture_modulation(points: np.ndarray, strength: float, freq: float) -> np.ndarray:
    """Smooth deterministic pattern in [1 - strength, 1], evaluated per point."""
    if strength == 0.0:
        return np.ones(points.shape[:-1])
    two_pi_f = 2.0 * np.pi * freq
    s = (
        np.sin(two_pi_f * (points @ _TEX_D1) + 0.9)
        + np.sin(two_pi_f * 1.618 * (points @ _TEX_D2) + 2.1)
        + np.sin(two_pi_f * 2.618 * (points @ _TEX_D3) + 4.2)
    ) / 3.0
    pattern = 0.5 + 0.5 * s
    return (1.0 - strength) + strength * pattern


def _intersect_sphere(prim, origin, dirs):
    oc = origin - np.asarray(prim.center)
    a = np.einsum("...i,...i", dirs, dirs)
    b = 2.0 * (dirs @ oc)
    c = oc @ oc - prim.radius**2
    disc = b * b - 4.0 * a * c
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t_near = (-b - sq) / (2.0 * a)
    t_far = (-b + sq) / (2.0 * a)
    t = np.where(t_near > _RAY_EPS, t_near, t_far)
    t = np.where(hit & (t > _RAY_EPS), t, np.inf)
    return t


def _intersect_plane(prim, origin, dirs):
    n = np.asarray(prim.normal)
    denom = dirs @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (prim.offset - origin @ n) / denom
    t = np.where((np.abs(denom) > _RAY_EPS) & (t > _RAY_EPS), t, np.inf)
    return t


def _intersect_box(prim, origin, dirs):
    lo = np.asarray(prim.min_corner)
    hi = np.asarray(prim.max_corner)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
    # 0 * inf (ray origin exactly on a slab plane) counts as inside the slab
    t1 = np.nan_to_num(t1, nan=-np.inf)
    t2 = np.nan_to_num(t2, nan=np.inf)
    tmin = np.minimum(t1, t2).max(axis=-1)
    tmax = np.maximum(t1, t2).min(axis=-1)
    hit = (tmax >= tmin) & (tmax > _RAY_EPS)
    t = np.where(tmin > _RAY_EPS, tmin, tmax)
    return np.where(hit, t, np.inf)


def _normals_at(prim, points, ids_match):
    n = np.zeros_like(points)
    if isinstance(prim, Sphere):
        n[ids_match] = (points[ids_match] - np.asarray(prim.center)) / prim.radius
    elif isinstance(prim, Plane):
        n[ids_match] = np.asarray(prim.normal)
    else:  # Box: face of largest normalized excursion from the center
        center = (np.asarray(prim.min_corner) + np.asarray(prim.max_corner)) / 2.0
        half = (np.asarray(prim.max_corner) - np.asarray(prim.min_corner)) / 2.0
        local = (points[ids_match] - center) / half
        axis = np.argmax(np.abs(local), axis=-1)
        face = np.zeros_like(local)
        face[np.arange(len(axis)), axis] = np.sign(
            local[np.arange(len(axis)), axis]
        )
        n[ids_match] = face
    return n


def render_analytic(scene: AnalyticScene, intr: Intrinsics, pose: Pose) -> RenderedFrame:
    """Ray-cast the scene; returns RGB plus exact depth and object-id maps.

    Rays are parameterized so the ray parameter equals camera-frame z;
    depth of a miss is encoded as 0.
    """
    if not scene.primitives:
        raise ValueError("analytic scene has no primitives")
    h, w = intr.height, intr.width
    u = np.arange(w, dtype=np.float64)
    v = np.arange(h, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    dirs_cam = np.stack(
        [(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1
    )
    dirs = dirs_cam @ pose.rotation.T  # world directions, z_cam == t
    origin = pose.center

    t_all = np.stack([
        _intersect_sphere(p, origin, dirs) if isinstance(p, Sphere)
        else _intersect_plane(p, origin, dirs) if isinstance(p, Plane)
        else _intersect_box(p, origin, dirs)
        for p in scene.primitives
    ])
    ids = np.argmin(t_all, axis=0).astype(np.int16)
    t_hit = np.take_along_axis(t_all, ids[None].astype(np.int64), axis=0)[0]
    hit = np.isfinite(t_hit)
    ids[~hit] = -1

    points = origin + np.where(hit, t_hit, 0.0)[..., None] * dirs
    color = np.empty((h, w, 3))
    color[:] = scene.background
    normals = np.zeros_like(points)
    albedo = np.zeros_like(points)
    for i, prim in enumerate(scene.primitives):
        sel = ids == i
        if not sel.any():
            continue
        normals += _normals_at(prim, points, sel)
        mod = _texture_modulation(points[sel], prim.texture, prim.texture_freq)
        albedo[sel] = np.asarray(prim.albedo) * mod[:, None]

    # two-sided shading: orient normals against the viewing ray
    flip = np.einsum("...i,...i", normals, dirs) > 0
    normals[flip] *= -1.0
    diffuse = np.clip(normals @ LIGHT_DIR, 0.0, None)
    shade = AMBIENT + (1.0 - AMBIENT) * diffuse
    color[hit] = albedo[hit] * shade[hit, None]

    rgb = (np.clip(color, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    depth = np.where(hit, t_hit, 0.0).astype(np.float32)
    return RenderedFrame(rgb=rgb, intrinsics=intr, pose=pose, depth=depth, object_ids=ids)


# ---------------------------------------------------------------------------
# Scene description files
# ---------------------------------------------------------------------------

def load_scene(path: str | Path) -> AnalyticScene:
    """Read a JSON scene description (see README for the schema)."""
    doc = json.loads(Path(path).read_text())
    prims: list[Primitive] = []
    for entry in doc.get("primitives", []):
        kind = entry["type"]
        common = {
            "albedo": tuple(entry["albedo"]),
            "texture": float(entry.get("texture", 0.0)),
            "texture_freq": float(entry.get("texture_freq", 8.0)),
        }
        if kind == "sphere":
            prims.append(Sphere(center=tuple(entry["center"]), radius=float(entry["radius"]), **common))
        elif kind == "box":
            prims.append(Box(min_corner=tuple(entry["min"]), max_corner=tuple(entry["max"]), **common))
        elif kind == "plane":
            prims.append(Plane(normal=tuple(entry["normal"]), offset=float(entry["offset"]), **common))
        else:
            raise ValueError(f"unknown primitive type {kind!r}")
    background = tuple(doc.get("background", (0.0, 0.0, 0.0)))
    return AnalyticScene(primitives=prims, background=background)


def save_scene(path: str | Path, scene: AnalyticScene) -> None:
    entries = []
    for p in scene.primitives:
        common = {"albedo": list(p.albedo), "texture": p.texture, "texture_freq": p.texture_freq}
        if isinstance(p, Sphere):
            entries.append({"type": "sphere", "center": list(p.center), "radius": p.radius, **common})
        elif isinstance(p, Box):
            entries.append({"type": "box", "min": list(p.min_corner), "max": list(p.max_corner), **common})
        else:
            entries.append({"type": "plane", "normal": list(p.normal), "offset": p.offset, **common})
    Path(path).write_text(
        json.dumps({"background": list(scene.background), "primitives": entries}, indent=2)
    )

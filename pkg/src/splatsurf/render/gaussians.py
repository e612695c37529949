"""Pretrained Gaussian-splat clouds: PLY ingestion and EWA forward splatting."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from ..camera import Intrinsics, Pose
from .frame import RenderedFrame

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

# Screen-space covariance dilation and compositing cutoffs of the reference
# splatting rasterizer.
COV2D_DILATION = 0.3
TRANSMITTANCE_MIN = 1e-4
ALPHA_MIN = 1.0 / 255.0
NEAR_CLIP = 0.01

N_SH_REST = 45  # degree-3 spherical harmonics, 15 coefficients per channel

_REQUIRED_PROPS = (
    ["x", "y", "z"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(N_SH_REST)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)

_PLY_DTYPES = {
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
}


class SplatPlyError(ValueError):
    """Raised when a PLY file does not follow the splat-cloud convention."""


@dataclass
class GaussianCloud:
    """Activated splat scene: linear scales, (0,1) opacities, unit quaternions."""

    positions: np.ndarray  # (N, 3)
    scales: np.ndarray  # (N, 3) linear
    rotations: np.ndarray  # (N, 4) unit quaternions, w-x-y-z
    opacities: np.ndarray  # (N,)
    sh_dc: np.ndarray  # (N, 3)
    sh_rest: np.ndarray  # (N, 15, 3)

    def __len__(self) -> int:
        return self.positions.shape[0]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def load_gaussian_ply(path: str | Path) -> GaussianCloud:
    """Load a splat cloud from a binary-little-endian PLY.

    Expects the standard splat property set (x, y, z, f_dc_*, f_rest_0..44,
    opacity, scale_*, rot_*); activations are applied on load (exp on scales,
    sigmoid on opacity, quaternion normalization).
    """
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"ply":
            raise SplatPlyError(f"{path}: not a PLY file")
        fmt = None
        count = None
        props: list[tuple[str, str]] = []
        in_vertex = False
        while True:
            line = f.readline()
            if not line:
                raise SplatPlyError(f"{path}: unexpected end of header")
            tokens = line.decode("ascii", "replace").strip().split()
            if not tokens:
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                in_vertex = tokens[1] == "vertex"
                if in_vertex:
                    count = int(tokens[2])
            elif tokens[0] == "property" and in_vertex:
                if tokens[1] == "list":
                    raise SplatPlyError(f"{path}: list properties unsupported")
                if tokens[1] not in _PLY_DTYPES:
                    raise SplatPlyError(f"{path}: property type {tokens[1]!r} unsupported")
                props.append((tokens[2], _PLY_DTYPES[tokens[1]]))
            elif tokens[0] == "end_header":
                break
        if fmt != "binary_little_endian":
            raise SplatPlyError(f"{path}: expected binary_little_endian, got {fmt}")
        if count is None:
            raise SplatPlyError(f"{path}: no vertex element")
        names = [n for n, _ in props]
        missing = [p for p in _REQUIRED_PROPS if p not in names]
        if missing:
            raise SplatPlyError(f"unsupported splat PLY: missing {missing[0]!r}")
        dtype = np.dtype(props)
        data = np.frombuffer(f.read(dtype.itemsize * count), dtype=dtype, count=count)

    if count == 0:
        raise SplatPlyError(f"{path}: empty splat cloud")

    col = lambda name: np.asarray(data[name], dtype=np.float64)
    positions = np.stack([col("x"), col("y"), col("z")], axis=1)
    scales = np.exp(np.stack([col(f"scale_{i}") for i in range(3)], axis=1))
    rotations = np.stack([col(f"rot_{i}") for i in range(4)], axis=1)
    norms = np.linalg.norm(rotations, axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        rotations = np.where(norms > 0, rotations / norms, rotations)
    opacities = _sigmoid(col("opacity"))
    sh_dc = np.stack([col(f"f_dc_{i}") for i in range(3)], axis=1)
    # f_rest is stored channel-major: 15 R coefficients, then G, then B
    rest = np.stack([col(f"f_rest_{i}") for i in range(N_SH_REST)], axis=1)
    sh_rest = rest.reshape(count, 3, 15).transpose(0, 2, 1)
    return GaussianCloud(positions, scales, rotations, opacities, sh_dc, sh_rest)


def save_gaussian_ply(
    path: str | Path,
    positions: np.ndarray,
    log_scales: np.ndarray,
    rotations: np.ndarray,
    opacity_logits: np.ndarray,
    sh_dc: np.ndarray,
    sh_rest: np.ndarray | None = None,
) -> None:
    """Write raw (pre-activation) splat attributes in the standard convention.

    ``sh_rest`` is (N, 15, 3) or None for zero higher-order coefficients.
    """
    n = positions.shape[0]
    if sh_rest is None:
        sh_rest = np.zeros((n, 15, 3))
    props = _REQUIRED_PROPS
    dtype = np.dtype([(p, "<f4") for p in props])
    out = np.empty(n, dtype=dtype)
    out["x"], out["y"], out["z"] = positions.T.astype(np.float32)
    for i in range(3):
        out[f"f_dc_{i}"] = sh_dc[:, i]
        out[f"scale_{i}"] = log_scales[:, i]
    rest = sh_rest.transpose(0, 2, 1).reshape(n, N_SH_REST)
    for i in range(N_SH_REST):
        out[f"f_rest_{i}"] = rest[:, i]
    out["opacity"] = opacity_logits
    for i in range(4):
        out[f"rot_{i}"] = rotations[:, i]
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        + "".join(f"property float {p}\n" for p in props)
        + "end_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(out.tobytes())


def cloud_from_colors(
    positions: np.ndarray,
    scales: np.ndarray,
    colors: np.ndarray,
    opacities: np.ndarray | None = None,
    rotations: np.ndarray | None = None,
) -> GaussianCloud:
    """Build an activated cloud with constant (degree-0) colors in [0, 1]."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = positions.shape[0]
    if opacities is None:
        opacities = np.full(n, 0.95)
    if rotations is None:
        rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    sh_dc = (np.asarray(colors, dtype=np.float64).reshape(-1, 3) - 0.5) / SH_C0
    return GaussianCloud(
        positions=positions,
        scales=np.asarray(scales, dtype=np.float64).reshape(-1, 3),
        rotations=np.asarray(rotations, dtype=np.float64).reshape(-1, 4),
        opacities=np.atleast_1d(np.asarray(opacities, dtype=np.float64)),
        sh_dc=sh_dc,
        sh_rest=np.zeros((n, 15, 3)),
    )


def quats_to_rotmats(q: np.ndarray) -> np.ndarray:
    """Unit quaternions (N, 4) w-x-y-z to rotation matrices (N, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((q.shape[0], 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def eval_sh(sh_dc: np.ndarray, sh_rest: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Evaluate degree-3 spherical harmonics along unit view directions.

    Returns colors in [0, 1] (the usual +0.5 offset is applied and the
    result clamped).
    """
    x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
    res = SH_C0 * sh_dc
    res = res - SH_C1 * y * sh_rest[:, 0] + SH_C1 * z * sh_rest[:, 1] - SH_C1 * x * sh_rest[:, 2]
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    res = (
        res
        + SH_C2[0] * xy * sh_rest[:, 3]
        + SH_C2[1] * yz * sh_rest[:, 4]
        + SH_C2[2] * (2.0 * zz - xx - yy) * sh_rest[:, 5]
        + SH_C2[3] * xz * sh_rest[:, 6]
        + SH_C2[4] * (xx - yy) * sh_rest[:, 7]
    )
    res = (
        res
        + SH_C3[0] * y * (3.0 * xx - yy) * sh_rest[:, 8]
        + SH_C3[1] * xy * z * sh_rest[:, 9]
        + SH_C3[2] * y * (4.0 * zz - xx - yy) * sh_rest[:, 10]
        + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * sh_rest[:, 11]
        + SH_C3[4] * x * (4.0 * zz - xx - yy) * sh_rest[:, 12]
        + SH_C3[5] * z * (xx - yy) * sh_rest[:, 13]
        + SH_C3[6] * x * (xx - 3.0 * yy) * sh_rest[:, 14]
    )
    return np.clip(res + 0.5, 0.0, 1.0)


@njit(cache=True, nogil=True)
def _composite(means, conics, opacities, colors, bboxes, bg, height, width):
    img = np.empty((height, width, 3))
    for y in range(height):
        for x in range(width):
            img[y, x, 0] = 0.0
            img[y, x, 1] = 0.0
            img[y, x, 2] = 0.0
    trans = np.ones((height, width))
    for g in range(means.shape[0]):
        x0, x1, y0, y1 = bboxes[g, 0], bboxes[g, 1], bboxes[g, 2], bboxes[g, 3]
        mx, my = means[g, 0], means[g, 1]
        ca, cb, cc = conics[g, 0], conics[g, 1], conics[g, 2]
        op = opacities[g]
        for y in range(y0, y1 + 1):
            dy = y - my
            for x in range(x0, x1 + 1):
                t = trans[y, x]
                if t < TRANSMITTANCE_MIN:
                    continue
                dx = x - mx
                power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
                if power > 0.0:
                    continue
                alpha = op * np.exp(power)
                if alpha < ALPHA_MIN:
                    continue
                w = alpha * t
                img[y, x, 0] += w * colors[g, 0]
                img[y, x, 1] += w * colors[g, 1]
                img[y, x, 2] += w * colors[g, 2]
                trans[y, x] = t * (1.0 - alpha)
    for y in range(height):
        for x in range(width):
            t = trans[y, x]
            img[y, x, 0] += t * bg[0]
            img[y, x, 1] += t * bg[1]
            img[y, x, 2] += t * bg[2]
    return img


def render_splats(
    cloud: GaussianCloud,
    intr: Intrinsics,
    pose: Pose,
    background: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> RenderedFrame:
    """EWA forward splatting of the cloud into the given camera.

    Elements are projected, their 2D covariances dilated by a fixed 0.3 px^2,
    sorted globally by camera depth (ties broken by element index), and
    composited front to back until per-pixel transmittance drops below 1e-4.
    Elements with non-finite attributes are skipped and counted.
    """
    if len(cloud) == 0:
        raise ValueError("cannot render an empty cloud")
    h, w = intr.height, intr.width

    finite = (
        np.isfinite(cloud.positions).all(axis=1)
        & np.isfinite(cloud.scales).all(axis=1)
        & np.isfinite(cloud.rotations).all(axis=1)
        & np.isfinite(cloud.opacities)
        & np.isfinite(cloud.sh_dc).all(axis=1)
        & np.isfinite(cloud.sh_rest).all(axis=(1, 2))
    )
    skipped = int((~finite).sum())

    pos = cloud.positions[finite]
    cam = pose.world_to_camera(pos)
    z = cam[:, 2]
    vis = z > NEAR_CLIP
    keep = np.flatnonzero(finite)[vis]
    if keep.size == 0:
        rgb = np.empty((h, w, 3))
        rgb[:] = background
        rgb = (np.clip(rgb, 0, 1) * 255.0 + 0.5).astype(np.uint8)
        return RenderedFrame(rgb=rgb, intrinsics=intr, pose=pose, skipped_elements=skipped)

    cam = cam[vis]
    z = z[vis]
    mx = intr.fx * cam[:, 0] / z + intr.cx
    my = intr.fy * cam[:, 1] / z + intr.cy

    rot = quats_to_rotmats(cloud.rotations[keep])
    m = rot * cloud.scales[keep][:, None, :]
    cov3d = m @ m.transpose(0, 2, 1)
    w2c = pose.rotation.T
    cov_cam = w2c @ cov3d @ w2c.T

    n = z.shape[0]
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = intr.fx / z
    jac[:, 0, 2] = -intr.fx * cam[:, 0] / (z * z)
    jac[:, 1, 1] = intr.fy / z
    jac[:, 1, 2] = -intr.fy * cam[:, 1] / (z * z)
    cov2d = jac @ cov_cam @ jac.transpose(0, 2, 1)
    cov2d[:, 0, 0] += COV2D_DILATION
    cov2d[:, 1, 1] += COV2D_DILATION

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = np.ceil(3.0 * np.sqrt(np.maximum(lam_max, 0.0)))

    x0 = np.maximum(np.floor(mx - radius), 0).astype(np.int64)
    x1 = np.minimum(np.ceil(mx + radius), w - 1).astype(np.int64)
    y0 = np.maximum(np.floor(my - radius), 0).astype(np.int64)
    y1 = np.minimum(np.ceil(my + radius), h - 1).astype(np.int64)
    footprint = (det > 0) & (x0 <= x1) & (y0 <= y1) & (cloud.opacities[keep] >= ALPHA_MIN)

    idx = np.flatnonzero(footprint)
    if idx.size == 0:
        rgb = np.empty((h, w, 3))
        rgb[:] = background
        rgb = (np.clip(rgb, 0, 1) * 255.0 + 0.5).astype(np.uint8)
        return RenderedFrame(rgb=rgb, intrinsics=intr, pose=pose, skipped_elements=skipped)

    order = idx[np.argsort(z[idx], kind="stable")]
    conics = np.stack([c / det, -b / det, a / det], axis=1)  # inverse covariance terms

    dirs = pos[vis] - pose.center
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    colors = eval_sh(cloud.sh_dc[keep], cloud.sh_rest[keep], dirs)

    bboxes = np.stack([x0, x1, y0, y1], axis=1)
    img = _composite(
        np.stack([mx, my], axis=1)[order],
        conics[order],
        cloud.opacities[keep][order],
        colors[order],
        bboxes[order],
        np.asarray(background, dtype=np.float64),
        h,
        w,
    )
    rgb = (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return RenderedFrame(rgb=rgb, intrinsics=intr, pose=pose, skipped_elements=skipped)

"""Colored triangle meshes and their binary PLY serialization."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (N, 3) float64
    colors: np.ndarray  # (N, 3) uint8
    faces: np.ndarray  # (M, 3) int32

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int32).reshape(-1, 3)
        if self.colors.shape[0] != self.vertices.shape[0]:
            raise ValueError("one color per vertex required")
        if len(self.faces) and self.faces.max() >= len(self.vertices):
            raise ValueError("face index out of range")
        if len(self.vertices) and not np.isfinite(self.vertices).all():
            raise ValueError("mesh contains non-finite vertices")

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    @staticmethod
    def empty() -> "TriangleMesh":
        return TriangleMesh(
            vertices=np.zeros((0, 3)), colors=np.zeros((0, 3), np.uint8),
            faces=np.zeros((0, 3), np.int32),
        )


def save_mesh_ply(path: str | Path, mesh: TriangleMesh) -> None:
    """Write a binary-little-endian PLY with per-vertex uchar RGB."""
    n, m = len(mesh.vertices), len(mesh.faces)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        f"element face {m}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    vdtype = np.dtype([("xyz", "<f4", 3), ("rgb", "u1", 3)])
    verts = np.empty(n, dtype=vdtype)
    verts["xyz"] = mesh.vertices.astype(np.float32)
    verts["rgb"] = mesh.colors
    fdtype = np.dtype([("count", "u1"), ("idx", "<i4", 3)])
    faces = np.empty(m, dtype=fdtype)
    faces["count"] = 3
    faces["idx"] = mesh.faces
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(verts.tobytes())
        f.write(faces.tobytes())


def load_mesh_ply(path: str | Path) -> TriangleMesh:
    """Read meshes written by save_mesh_ply (and plain xyz[+rgb] point PLYs,
    which load as meshes with zero faces)."""
    with open(path, "rb") as f:
        if f.readline().strip() != b"ply":
            raise ValueError(f"{path}: not a PLY file")
        fmt = None
        elements: list[tuple[str, int, list[tuple[str, str]]]] = []
        while True:
            tokens = f.readline().decode("ascii").strip().split()
            if not tokens:
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                elements.append((tokens[1], int(tokens[2]), []))
            elif tokens[0] == "property":
                elements[-1][2].append((tokens[1], tokens[-1]))
            elif tokens[0] == "end_header":
                break
        if fmt != "binary_little_endian":
            raise ValueError(f"{path}: expected binary_little_endian PLY, got {fmt}")

        type_map = {"float": "<f4", "float32": "<f4", "double": "<f8",
                    "uchar": "u1", "uint8": "u1", "int": "<i4", "int32": "<i4"}
        vertices = np.zeros((0, 3))
        colors = None
        faces = np.zeros((0, 3), np.int32)
        for name, count, props in elements:
            if name == "vertex":
                dtype = np.dtype([(p, type_map[t]) for t, p in props])
                data = np.frombuffer(f.read(dtype.itemsize * count), dtype=dtype, count=count)
                vertices = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
                if "red" in dtype.names:
                    colors = np.stack([data["red"], data["green"], data["blue"]], axis=1).astype(np.uint8)
            elif name == "face":
                if props != [("list", "vertex_indices")] and props[0][0] != "list":
                    raise ValueError(f"{path}: unsupported face encoding")
                fdtype = np.dtype([("count", "u1"), ("idx", "<i4", 3)])
                data = np.frombuffer(f.read(fdtype.itemsize * count), dtype=fdtype, count=count)
                if count and not (data["count"] == 3).all():
                    raise ValueError(f"{path}: non-triangle faces unsupported")
                faces = data["idx"].astype(np.int32)
    if colors is None:
        colors = np.zeros((len(vertices), 3), np.uint8)
    return TriangleMesh(vertices=vertices, colors=colors, faces=faces)


def save_point_cloud_ply(path: str | Path, points: np.ndarray) -> None:
    """Write an (N, 3) point cloud as a vertex-only binary PLY."""
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(pts)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "end_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(pts.astype("<f4").tobytes())


def load_point_cloud_ply(path: str | Path) -> np.ndarray:
    """Read the vertex positions of any PLY written by this module."""
    return load_mesh_ply(path).vertices

"""Mesh scoring against ground truth: ICP alignment, F1 at a threshold,
accuracy/completeness at two radii, and Chamfer distance.

Nearest-neighbor queries use an exact k-d tree so every metric is
deterministic.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriangleMesh


class EvaluationError(ValueError):
    """Raised for degenerate scoring inputs."""


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (N, 3)

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(pts) < 1:
            raise EvaluationError("point cloud must contain at least one point")
        if not np.isfinite(pts).all():
            raise EvaluationError("point cloud contains non-finite points")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    rmse: float
    iterations: int


@dataclass
class MetricsReport:
    """All scores of one prediction/ground-truth pair.

    ``precision``/``recall``/``f1`` follow the F1-at-threshold protocol;
    the ``*_small``/``*_large`` percentages follow the two-radius
    accuracy/completeness protocol. Chamfer is the symmetric mean
    nearest-neighbor distance, halved.
    """

    tau: float
    precision: float
    recall: float
    f1: float
    radius_small: float
    accuracy_small: float  # percent
    completeness_small: float  # percent
    f1_small: float  # percent
    radius_large: float
    accuracy_large: float
    completeness_large: float
    f1_large: float
    chamfer: float
    icp_rmse: float
    n_pred: int
    n_gt: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @staticmethod
    def from_json(text: str) -> "MetricsReport":
        return MetricsReport(**json.loads(text))


def sample_mesh(mesh: TriangleMesh, n: int, seed: int) -> PointCloud:
    """Area-weighted uniform surface sampling with a deterministic seed."""
    if mesh.is_empty:
        raise EvaluationError("cannot sample an empty mesh")
    if n < 1:
        raise EvaluationError("sample count must be >= 1")
    a = mesh.vertices[mesh.faces[:, 0]]
    b = mesh.vertices[mesh.faces[:, 1]]
    c = mesh.vertices[mesh.faces[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    total = areas.sum()
    if total <= 0:
        raise EvaluationError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    face_idx = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    pts = (
        (1.0 - r1)[:, None] * a[face_idx]
        + (r1 * (1.0 - r2))[:, None] * b[face_idx]
        + (r1 * r2)[:, None] * c[face_idx]
    )
    return PointCloud(pts)


def _fit_rigid(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Closed-form rigid fit (SVD of the cross-covariance) for paired points."""
    centroid_src = src.mean(axis=0)
    centroid_dst = dst.mean(axis=0)
    h = (src - centroid_src).T @ (dst - centroid_dst)
    u, s, vt = np.linalg.svd(h)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise EvaluationError("rank-deficient alignment")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = centroid_dst - rot @ centroid_src
    return RigidTransform(rotation=rot, translation=t)


def icp_align(
    src: PointCloud,
    dst: PointCloud,
    max_iters: int = 50,
    tol: float = 1e-9,
) -> IcpResult:
    """Point-to-point ICP: nearest neighbors, closed-form rigid refit,
    iterate until the RMSE change drops below tol.

    Returns the transform mapping src onto dst. Translation starts from
    centroid alignment. Collinear clouds raise "rank-deficient alignment".
    """
    if len(src) < 3 or len(dst) < 3:
        raise EvaluationError("ICP needs at least 3 points per cloud")
    tree = cKDTree(dst.points)
    transform = RigidTransform(np.eye(3), dst.points.mean(axis=0) - src.points.mean(axis=0))
    prev_rmse = np.inf
    rmse = np.inf
    iterations = 0
    for iterations in range(1, max_iters + 1):
        moved = transform.apply(src.points)
        dists, idx = tree.query(moved)
        rmse = float(np.sqrt(np.mean(dists**2)))
        if abs(prev_rmse - rmse) < tol:
            break
        transform = _fit_rigid(src.points, dst.points[idx])
        prev_rmse = rmse
    return IcpResult(transform=transform, rmse=rmse, iterations=iterations)


def precision_recall_f1(pred: PointCloud, gt: PointCloud, tau: float) -> tuple[float, float, float]:
    """Fractions of pred within tau of gt (precision) and gt within tau of
    pred (recall), plus their harmonic mean (0 when both are 0)."""
    if tau <= 0:
        raise EvaluationError("tau must be positive")
    d_pred = cKDTree(gt.points).query(pred.points)[0]
    d_gt = cKDTree(pred.points).query(gt.points)[0]
    precision = float(np.mean(d_pred <= tau))
    recall = float(np.mean(d_gt <= tau))
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def chamfer(pred: PointCloud, gt: PointCloud) -> float:
    """Symmetric mean nearest-neighbor distance, halved."""
    d_pred = cKDTree(gt.points).query(pred.points)[0]
    d_gt = cKDTree(pred.points).query(gt.points)[0]
    return float((d_pred.mean() + d_gt.mean()) / 2.0)


def score(
    pred: PointCloud,
    gt: PointCloud,
    tau: float,
    radius_small: float = 0.0025,
    radius_large: float = 0.005,
    icp_rmse: float = 0.0,
) -> MetricsReport:
    """Full metrics report for an (already aligned) prediction."""
    precision, recall, f1 = precision_recall_f1(pred, gt, tau)
    a_s, c_s, f_s = precision_recall_f1(pred, gt, radius_small)
    a_l, c_l, f_l = precision_recall_f1(pred, gt, radius_large)
    return MetricsReport(
        tau=tau,
        precision=precision,
        recall=recall,
        f1=f1,
        radius_small=radius_small,
        accuracy_small=100.0 * a_s,
        completeness_small=100.0 * c_s,
        f1_small=100.0 * f_s,
        radius_large=radius_large,
        accuracy_large=100.0 * a_l,
        completeness_large=100.0 * c_l,
        f1_large=100.0 * f_l,
        chamfer=chamfer(pred, gt),
        icp_rmse=icp_rmse,
        n_pred=len(pred),
        n_gt=len(gt),
    )


def save_report(path: str | Path, report: MetricsReport) -> None:
    Path(path).write_text(report.to_json() + "\n")


def load_report(path: str | Path) -> MetricsReport:
    return MetricsReport.from_json(Path(path).read_text())

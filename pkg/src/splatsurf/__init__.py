"""splatsurf: surface reconstruction from Gaussian-splat scenes via
stereo-calibrated novel views, classical stereo matching, and TSDF fusion."""

__version__ = "0.1.0"

from .camera import (
    Frame,
    Intrinsics,
    Pose,
    StereoRig,
    baseline_from_radius,
    make_stereo_rig,
    project,
    scene_radius,
    unproject,
)
from .evaluation import MetricsReport, PointCloud, chamfer, icp_align, precision_recall_f1, sample_mesh
from .fusion import TsdfVolume, clean_mesh, extract_mesh, fit_volume, integrate
from .mesh import TriangleMesh, load_mesh_ply, save_mesh_ply
from .render import (
    AnalyticScene,
    GaussianCloud,
    RenderedFrame,
    load_gaussian_ply,
    render_analytic,
    render_splats,
)
from .segmentation import MaskTrack, dilate, propagate_mask, select_seeds_fps, track_object
from .stereo import (
    DepthFrame,
    DisparityMap,
    StereoParams,
    depth_error_bound,
    depth_range_mask,
    disparity_to_depth,
    match_sgm,
    occlusion_mask,
)

__all__ = [
    "AnalyticScene",
    "DepthFrame",
    "DisparityMap",
    "Frame",
    "GaussianCloud",
    "Intrinsics",
    "MaskTrack",
    "MetricsReport",
    "PointCloud",
    "Pose",
    "RenderedFrame",
    "StereoParams",
    "StereoRig",
    "TriangleMesh",
    "TsdfVolume",
    "baseline_from_radius",
    "chamfer",
    "clean_mesh",
    "depth_error_bound",
    "depth_range_mask",
    "dilate",
    "disparity_to_depth",
    "extract_mesh",
    "fit_volume",
    "icp_align",
    "integrate",
    "load_gaussian_ply",
    "load_mesh_ply",
    "make_stereo_rig",
    "match_sgm",
    "occlusion_mask",
    "precision_recall_f1",
    "project",
    "propagate_mask",
    "render_analytic",
    "render_splats",
    "sample_mesh",
    "save_mesh_ply",
    "scene_radius",
    "select_seeds_fps",
    "track_object",
    "unproject",
]

"""Stereo image-pair production: Gaussian-splat forward rendering and the
analytic ray-cast oracle that also yields exact ground-truth depth."""

from .frame import RenderedFrame
from .analytic import (
    AnalyticScene,
    Box,
    Plane,
    Sphere,
    load_scene,
    render_analytic,
    save_scene,
)
from .gaussians import (
    GaussianCloud,
    SplatPlyError,
    cloud_from_colors,
    load_gaussian_ply,
    render_splats,
    save_gaussian_ply,
)

__all__ = [
    "AnalyticScene",
    "Box",
    "GaussianCloud",
    "Plane",
    "RenderedFrame",
    "Sphere",
    "SplatPlyError",
    "cloud_from_colors",
    "load_gaussian_ply",
    "load_scene",
    "render_analytic",
    "render_splats",
    "save_gaussian_ply",
    "save_scene",
]

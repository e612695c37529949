"""Shared fixtures: oracle scenes, orbit cameras, and small helpers."""

from pathlib import Path

import numpy as np
import pytest

from splatsurf.camera import Frame, Intrinsics, look_at, save_camera_file
from splatsurf.render import AnalyticScene, Plane, Sphere, save_scene


def make_intrinsics(width=320, height=240, fov_deg=60.0) -> Intrinsics:
    fx = width / (2.0 * np.tan(np.radians(fov_deg) / 2.0))
    return Intrinsics(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0, width=width, height=height)


def orbit_frames(
    n: int,
    radius: float,
    height: float,
    intr: Intrinsics,
    target=(0.0, 0.0, 0.0),
) -> list[Frame]:
    """n cameras on a circle of the given radius and height, looking at the target."""
    frames = []
    for i in range(n):
        angle = 2.0 * np.pi * i / n
        eye = (radius * np.cos(angle), radius * np.sin(angle), height)
        frames.append(
            Frame(frame_id=f"{i:04d}", intrinsics=intr, pose=look_at(eye, target))
        )
    return frames


@pytest.fixture
def small_intrinsics():
    return make_intrinsics(width=160, height=120)


@pytest.fixture
def textured_sphere_scene():
    """Sphere resting near a ground plane, both with matching-friendly texture."""
    return AnalyticScene(
        primitives=[
            Sphere(center=(0.0, 0.0, 0.0), radius=1.0, albedo=(0.8, 0.55, 0.35),
                   texture=0.75, texture_freq=18.0),
            Plane(normal=(0.0, 0.0, 1.0), offset=-1.1, albedo=(0.4, 0.5, 0.65),
                  texture=0.75, texture_freq=18.0),
        ],
        background=(0.05, 0.05, 0.08),
    )


@pytest.fixture
def sphere_only_scene():
    return AnalyticScene(
        primitives=[
            Sphere(center=(0.0, 0.0, 0.0), radius=1.0, albedo=(0.8, 0.55, 0.35),
                   texture=0.75, texture_freq=18.0),
        ],
        background=(0.05, 0.05, 0.08),
    )


def write_oracle_run(
    directory: Path,
    n_frames: int = 24,
    width: int = 320,
    height: int = 240,
    orbit_radius: float = 2.6,
    orbit_height: float = 0.5,
    grid_resolution: int = 128,
    extra_config: dict | None = None,
) -> Path:
    """Write scene.json, cameras.txt, and config.ini for a full oracle run;
    returns the config path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    scene = AnalyticScene(
        primitives=[
            Sphere(center=(0.0, 0.0, 0.0), radius=1.0, albedo=(0.8, 0.55, 0.35),
                   texture=0.75, texture_freq=18.0),
            Plane(normal=(0.0, 0.0, 1.0), offset=-1.05, albedo=(0.4, 0.5, 0.65),
                  texture=0.75, texture_freq=18.0),
        ],
        background=(0.05, 0.05, 0.08),
    )
    save_scene(directory / "scene.json", scene)
    intr = make_intrinsics(width=width, height=height)
    frames = orbit_frames(n_frames, radius=orbit_radius, height=orbit_height, intr=intr)
    save_camera_file(directory / "cameras.txt", frames)
    sections: dict[str, dict[str, str]] = {
        "scene": {
            "source": "analytic",
            "analytic_scene": str(directory / "scene.json"),
            "camera_file": str(directory / "cameras.txt"),
            "output_dir": str(directory / "out"),
        },
        "fusion": {"grid_resolution": str(grid_resolution), "min_triangles": "100"},
        "eval": {"gt_stride": "2"},
    }
    for key, value in (extra_config or {}).items():
        section, name = key.split(".")
        sections.setdefault(section, {})[name] = str(value)
    lines = []
    for section, entries in sections.items():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in entries.items()]
    config_path = directory / "config.ini"
    config_path.write_text("\n".join(lines) + "\n")
    return config_path

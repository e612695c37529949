import numpy as np
import pytest

from splatsurf.camera import Intrinsics, Pose, make_stereo_rig
from splatsurf.render import (
    AnalyticScene,
    Box,
    Plane,
    Sphere,
    load_scene,
    render_analytic,
    save_scene,
)

INTR = Intrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=101, height=101)


def test_sphere_center_depth_exact():
    scene = AnalyticScene([Sphere(center=(0, 0, 3), radius=1.0, albedo=(1, 0, 0))])
    frame = render_analytic(scene, INTR, Pose.identity())
    assert frame.depth[50, 50] == 2.0


def test_miss_uses_zero_sentinel():
    scene = AnalyticScene([Sphere(center=(0, 0, 3), radius=0.1, albedo=(1, 0, 0))])
    frame = render_analytic(scene, INTR, Pose.identity())
    assert frame.depth[0, 0] == 0.0
    assert frame.object_ids[0, 0] == -1
    assert frame.object_ids[50, 50] == 0


def test_frontal_plane_depth_exact_everywhere():
    scene = AnalyticScene([Plane(normal=(0, 0, 1), offset=5.0, albedo=(0.5, 0.5, 0.5))])
    frame = render_analytic(scene, INTR, Pose.identity())
    assert (frame.depth == 5.0).all()


def test_box_near_face_depth():
    scene = AnalyticScene([Box(min_corner=(-1, -1, 2), max_corner=(1, 1, 4), albedo=(1, 1, 1))])
    frame = render_analytic(scene, INTR, Pose.identity())
    assert frame.depth[50, 50] == 2.0


def test_nearest_hit_wins():
    scene = AnalyticScene([
        Plane(normal=(0, 0, 1), offset=5.0, albedo=(1, 0, 0)),
        Sphere(center=(0, 0, 3), radius=1.0, albedo=(0, 1, 0)),
    ])
    frame = render_analytic(scene, INTR, Pose.identity())
    assert frame.object_ids[50, 50] == 1
    assert frame.depth[50, 50] == 2.0
    assert frame.object_ids[0, 0] == 0


def test_flat_albedo_has_no_texture_variation():
    scene = AnalyticScene([Plane(normal=(0, 0, 1), offset=5.0, albedo=(0.6, 0.4, 0.2))])
    frame = render_analytic(scene, INTR, Pose.identity())
    # frontal plane, constant normal, fixed light: one color everywhere
    assert np.unique(frame.rgb.reshape(-1, 3), axis=0).shape[0] == 1


def test_textured_plane_varies():
    scene = AnalyticScene(
        [Plane(normal=(0, 0, 1), offset=5.0, albedo=(0.6, 0.4, 0.2), texture=0.8, texture_freq=3.0)]
    )
    frame = render_analytic(scene, INTR, Pose.identity())
    assert np.unique(frame.rgb.reshape(-1, 3), axis=0).shape[0] > 50


def test_deterministic():
    scene = AnalyticScene([
        Sphere(center=(0.2, -0.1, 4), radius=1.3, albedo=(0.9, 0.2, 0.4), texture=0.5),
    ])
    a = render_analytic(scene, INTR, Pose.identity())
    b = render_analytic(scene, INTR, Pose.identity())
    np.testing.assert_array_equal(a.rgb, b.rgb)
    np.testing.assert_array_equal(a.depth, b.depth)


def test_stereo_photo_consistency_on_frontal_plane():
    """Left (u, v) and right (u - fx*B/Z, v) must see the same color."""
    depth_z = 5.0
    disparity = 20  # choose B so the disparity is integral: B = d*Z/fx
    baseline = disparity * depth_z / INTR.fx
    scene = AnalyticScene(
        [Plane(normal=(0, 0, 1), offset=depth_z, albedo=(0.7, 0.6, 0.5), texture=0.8, texture_freq=1.0)]
    )
    rig = make_stereo_rig(Pose.identity(), INTR, baseline)
    left = render_analytic(scene, INTR, rig.left).rgb.astype(np.int16)
    right = render_analytic(scene, INTR, rig.right).rgb.astype(np.int16)
    diff = np.abs(left[:, disparity:] - right[:, :-disparity])
    assert diff.max() <= 1  # 8-bit quantization of identical model colors
    assert (diff == 0).mean() > 0.97


def test_primitive_invariants():
    with pytest.raises(ValueError):
        Sphere(center=(0, 0, 0), radius=0.0, albedo=(1, 1, 1))
    with pytest.raises(ValueError):
        Box(min_corner=(0, 0, 0), max_corner=(0, 1, 1), albedo=(1, 1, 1))
    with pytest.raises(ValueError):
        Plane(normal=(0, 0, 2), offset=0.0, albedo=(1, 1, 1))


def test_empty_scene_rejected():
    with pytest.raises(ValueError):
        render_analytic(AnalyticScene([]), INTR, Pose.identity())


def test_scene_json_round_trip(tmp_path):
    scene = AnalyticScene(
        primitives=[
            Sphere(center=(1, 2, 3), radius=0.5, albedo=(0.1, 0.2, 0.3), texture=0.4),
            Box(min_corner=(-1, -1, -1), max_corner=(1, 1, 1), albedo=(0.5, 0.5, 0.5)),
            Plane(normal=(0, 0, 1), offset=-2.0, albedo=(0.9, 0.8, 0.7), texture_freq=4.0),
        ],
        background=(0.1, 0.0, 0.2),
    )
    path = tmp_path / "scene.json"
    save_scene(path, scene)
    loaded = load_scene(path)
    assert loaded == scene

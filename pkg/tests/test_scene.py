import math

import numpy as np
import pytest

from servosim.errors import ConfigError
from servosim.geometry import DEFAULT_INTRINSICS, Pose4, project
from servosim.scene import (RandomizationConfig, SceneObject, Workspace,
                            designed_target, is_convex, polygon_area,
                            sample_eval_poses, sample_scene)


def test_scene_object_validation():
    with pytest.raises(ValueError):
        SceneObject(vertices=((0, 0), (0.01, 0)), color=(1, 1, 1))
    with pytest.raises(ValueError):  # collinear, degenerate
        SceneObject(vertices=((0, 0), (0.01, 0), (0.02, 0)), color=(1, 1, 1))
    with pytest.raises(ValueError):  # non-convex
        SceneObject(vertices=((0, 0), (0.05, 0), (0.01, 0.005), (0, 0.05)), color=(1, 1, 1))
    with pytest.raises(ValueError):  # outside the bounding circle
        SceneObject(vertices=((-0.2, 0), (0.2, 0), (0, 0.1)), color=(1, 1, 1))


def test_workspace_validation():
    with pytest.raises(ValueError):
        Workspace(x_extent=0.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        RandomizationConfig(distractor_count=(2, 1))
    with pytest.raises(ConfigError):
        RandomizationConfig(distractor_count=(-1, 1))
    with pytest.raises(ConfigError):
        RandomizationConfig(brightness=(0.1, 0.9))
    with pytest.raises(ConfigError):
        RandomizationConfig(texture_mode="photo")
    with pytest.raises(ConfigError):
        RandomizationConfig(shape_vertices=(2, 5))


def test_config_json_round_trip():
    cfg = RandomizationConfig(distractor_count=(1, 4), texture_mode="image",
                              brightness=(0.5, 0.9))
    assert RandomizationConfig.from_json(cfg.to_json()) == cfg
    # documented field names are present in the JSON document
    doc = cfg.to_dict()
    for key in ("distractor_count", "brightness", "texture_mode", "shape_vertices"):
        assert key in doc


def test_sample_scene_zero_distractors(plain_config):
    scene = sample_scene(plain_config, 3)
    assert scene.distractors == ()


def test_sample_scene_deterministic():
    cfg = RandomizationConfig(distractor_count=(1, 5))
    a = sample_scene(cfg, 1234)
    b = sample_scene(cfg, 1234)
    assert a == b
    assert a != sample_scene(cfg, 1235)


def test_sampled_polygons_are_valid():
    cfg = RandomizationConfig(distractor_count=(0, 3))
    for seed in range(50):
        scene = sample_scene(cfg, seed)
        for obj in scene.objects():
            assert len(obj.vertices) >= 3
            assert is_convex(obj.vertices)
            assert abs(polygon_area(obj.vertices)) > 1e-6
            assert max(math.hypot(x, y) for x, y in obj.vertices) <= 0.12


def test_distractor_count_histogram():
    cfg = RandomizationConfig(distractor_count=(1, 5))
    counts = np.zeros(6, dtype=int)
    for seed in range(1000):
        counts[len(sample_scene(cfg, seed).distractors)] += 1
    assert counts[0] == 0
    for k in range(1, 6):
        assert counts[k] >= 50, f"count {k} occurred only {counts[k]}/1000 times"


def test_distractors_never_share_target_color():
    cfg = RandomizationConfig(distractor_count=(2, 4))
    for seed in range(100):
        scene = sample_scene(cfg, seed)
        for d in scene.distractors:
            assert np.abs(np.subtract(d.color, scene.target.color)).max() > 0.05


def test_scene_brightness_within_range():
    cfg = RandomizationConfig(brightness=(0.4, 0.8))
    for seed in range(50):
        assert 0.4 <= sample_scene(cfg, seed).brightness <= 0.8


def test_objects_visible_from_start_height():
    # every posed vertex projects inside the frame from the canonical start
    cfg = RandomizationConfig(distractor_count=(0, 3))
    camera = Pose4(0.0, 0.0, 0.45, 0.0)
    for seed in range(200):
        scene = sample_scene(cfg, seed)
        for obj in scene.objects():
            for wx, wy in obj.world_vertices():
                pix = project(camera, DEFAULT_INTRINSICS, (wx, wy))
                assert 0 <= pix.u <= 64 and 0 <= pix.v <= 64


def test_eval_poses_bounds():
    ws = Workspace()
    poses = sample_eval_poses(30, ws, 7)
    assert len(poses) == 30
    for x, y, yaw in poses:
        assert abs(x) <= 0.10 and abs(y) <= 0.075
        assert abs(yaw) <= math.pi / 2


def test_eval_poses_single():
    (pose,) = sample_eval_poses(1, Workspace(), 3)
    assert abs(pose[0]) <= 0.10


def test_eval_poses_rejects_zero():
    with pytest.raises(ValueError):
        sample_eval_poses(0, Workspace(), 0)


def test_eval_poses_deterministic():
    ws = Workspace()
    assert sample_eval_poses(5, ws, 11) == sample_eval_poses(5, ws, 11)


def test_eval_pose_x_uniformity():
    # Kolmogorov-Smirnov against the uniform CDF at the 1% level
    ws = Workspace()
    xs = np.array([p[0] for p in sample_eval_poses(10000, ws, 99)])
    u = (np.sort(xs) + ws.x_extent / 2) / ws.x_extent
    n = len(u)
    ecdf_hi = np.arange(1, n + 1) / n
    ecdf_lo = np.arange(0, n) / n
    d = max(np.abs(ecdf_hi - u).max(), np.abs(u - ecdf_lo).max())
    assert d < 1.63 / math.sqrt(n)


def test_designed_target_shape():
    tgt = designed_target(scale=0.05)
    assert is_convex(tgt.vertices)
    assert max(math.hypot(x, y) for x, y in tgt.vertices) == pytest.approx(0.05)
    moved = tgt.at_pose((0.01, 0.02, 0.3))
    assert moved.pose2 == (0.01, 0.02, 0.3)
    assert moved.vertices == tgt.vertices

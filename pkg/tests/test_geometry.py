import numpy as np
import pytest

from posecascade.data.domain import DepthFrame, HandPose
from posecascade.geometry.domain import (
    CameraIntrinsics,
    CubeSpec,
    GeometryError,
    GeometryErrorCode,
    PixelPoint,
    WorldPoint,
    compute_hand_center,
    compute_region_window,
    compute_region_windows,
    cube_box,
    extract_cube_patch,
    grid_region_windows,
    patch_to_world,
    pose_normalized_to_world,
    pose_world_to_normalized,
    project_pixel_to_world,
    project_points,
    project_world_to_pixel,
    unproject_points,
    world_to_patch,
)


def _random_points(rng: np.random.Generator, count: int) -> np.ndarray:
    xy = rng.uniform(-300, 300, size=(count, 2))
    z = rng.uniform(50, 2000, size=(count, 1))
    return np.hstack([xy, z])


def test_projection_round_trip(rng: np.random.Generator, camera: CameraIntrinsics):
    points = _random_points(rng, 1000)
    back = unproject_points(project_points(points, camera), camera)
    assert np.max(np.abs(back - points)) < 1e-6


def test_single_point_projection_matches_batch(camera: CameraIntrinsics):
    point = WorldPoint(x=12.5, y=-40.0, z=480.0)
    pixel = project_world_to_pixel(point, camera)
    assert np.allclose([pixel.u, pixel.v, pixel.d], project_points(point.as_array(), camera))
    back = project_pixel_to_world(pixel, camera)
    assert np.allclose(back.as_array(), point.as_array())


def test_projection_rejects_points_behind_the_camera(camera: CameraIntrinsics):
    with pytest.raises(GeometryError) as error:
        project_world_to_pixel(WorldPoint(x=0, y=0, z=0), camera)
    assert error.value.code == GeometryErrorCode.non_positive_depth
    with pytest.raises(GeometryError):
        project_pixel_to_world(PixelPoint(u=1, v=1, d=-3), camera)


def _block_frame(depth_mm: int, rows: slice, cols: slice) -> DepthFrame:
    depth = np.zeros((128, 128), dtype=np.uint16)
    depth[rows, cols] = depth_mm
    return DepthFrame(128, 128, depth)


def test_hand_center_is_mean_of_back_projected_pixels(camera: CameraIntrinsics):
    frame = _block_frame(500, slice(60, 70), slice(40, 50))
    center = compute_hand_center(frame, camera)
    v, u = np.mgrid[60:70, 40:50]
    expected = unproject_points(
        np.stack([u.ravel(), v.ravel(), np.full(u.size, 500.0)], axis=-1), camera
    ).mean(axis=0)
    assert np.allclose(center.as_array(), expected)


def test_hand_center_ignores_depths_outside_the_range(camera: CameraIntrinsics):
    frame = _block_frame(2500, slice(0, 10), slice(0, 10))
    with pytest.raises(GeometryError) as error:
        compute_hand_center(frame, camera, valid_range=(1, 2000))
    assert error.value.code == GeometryErrorCode.empty_region


def test_cube_patch_is_normalized_and_bounded(camera: CameraIntrinsics):
    frame = _block_frame(520, slice(50, 80), slice(50, 80))
    cube = CubeSpec(center=compute_hand_center(frame, camera), size=150.0)
    patch = extract_cube_patch(frame, cube, camera, out_size=32)
    assert patch.shape == (1, 1, 32, 32)
    assert patch.data.min() >= -1.0 and patch.data.max() <= 1.0
    # Hand pixels sit exactly at the center depth; background becomes +1.
    values = set(np.unique(patch.data).tolist())
    assert values <= {0.0, 1.0}
    assert patch.data[0, 0, 16, 16] == 0.0


def test_cube_patch_clips_depths_far_from_the_center(camera: CameraIntrinsics):
    depth = np.full((128, 128), 300, dtype=np.uint16)
    depth[:, 64:] = 900
    frame = DepthFrame(128, 128, depth)
    cube = CubeSpec(center=WorldPoint(x=0.0, y=0.0, z=600.0), size=150.0)
    patch = extract_cube_patch(frame, cube, camera, out_size=16)
    assert set(np.unique(patch.data).tolist()) == {-1.0, 1.0}


def test_cube_box_is_centered_on_the_projected_center(camera: CameraIntrinsics):
    cube = CubeSpec(center=WorldPoint(x=0.0, y=0.0, z=500.0), size=150.0)
    u0, v0, u1, v1 = cube_box(cube, camera)
    assert (u0 + u1) / 2 == pytest.approx(camera.cx)
    assert (v0 + v1) / 2 == pytest.approx(camera.cy)
    assert u1 - u0 == pytest.approx(camera.fx * 150.0 / 500.0)


def test_patch_coordinates_round_trip(rng: np.random.Generator, camera: CameraIntrinsics):
    cube = CubeSpec(center=WorldPoint(x=10.0, y=-5.0, z=550.0))
    points = cube.center.as_array() + rng.uniform(-75, 75, size=(50, 3))
    back = patch_to_world(world_to_patch(points, cube, camera, 96), cube, camera, 96)
    assert np.max(np.abs(back - points)) < 1e-6


def test_pose_normalization_round_trip(rng: np.random.Generator):
    cube = CubeSpec(center=WorldPoint(x=10.0, y=-5.0, z=550.0))
    pose = HandPose(cube.center.as_array() + rng.uniform(-100, 100, size=(21, 3)))
    normalized = pose_world_to_normalized(pose, cube)
    assert normalized.shape == (63,)
    back = pose_normalized_to_world(normalized, cube)
    assert np.allclose(back.joints, pose.joints)


def test_joint_at_the_cube_center_gets_a_centered_window(camera: CameraIntrinsics):
    cube = CubeSpec(center=WorldPoint(x=0.0, y=0.0, z=500.0))
    window = compute_region_window(cube.center, cube, camera, patch_size=96, feat_size=12)
    assert (window.w, window.h) == (7, 7)
    assert (window.b_u, window.b_v) == (3, 3)


def test_region_windows_stay_inside_the_feature_map(
    rng: np.random.Generator, camera: CameraIntrinsics
):
    cube = CubeSpec(center=WorldPoint(x=0.0, y=0.0, z=500.0))
    xy = rng.uniform(-1e5, 1e5, size=(10_000, 2)) * rng.choice([1e-3, 1.0], size=(10_000, 1))
    z = rng.uniform(1e-3, 5000, size=(10_000, 1))
    windows = compute_region_windows(np.hstack([xy, z]), cube, camera, 96, 12, 7, 5)
    assert len(windows) == 10_000
    for window in windows:
        assert 0 <= window.b_u <= 12 - 7
        assert 0 <= window.b_v <= 12 - 5


def test_region_window_larger_than_the_map_is_rejected(camera: CameraIntrinsics):
    cube = CubeSpec(center=WorldPoint(x=0.0, y=0.0, z=500.0))
    with pytest.raises(GeometryError) as error:
        compute_region_window(cube.center, cube, camera, 96, 6, w=7, h=7)
    assert error.value.code == GeometryErrorCode.window_too_large


def test_grid_windows_cover_the_map_corners():
    windows = grid_region_windows(9, feat_size=12, w=7, h=7)
    assert len(windows) == 9
    assert (windows[0].b_u, windows[0].b_v) == (0, 0)
    assert (windows[-1].b_u, windows[-1].b_v) == (5, 5)
    assert all(0 <= w.b_u <= 5 and 0 <= w.b_v <= 5 for w in windows)


def test_camera_needs_positive_focal_lengths():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=0.0, fy=1.0, cx=0.0, cy=0.0)

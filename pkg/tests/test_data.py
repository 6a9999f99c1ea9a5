import pathlib

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from posecascade.autodiff.tensor import Tensor
from posecascade.data.augmentation import (
    augment_patch,
    augment_pose,
    augment_sample,
    draw_augmentation,
    inverse_patch_points,
    transform_patch_points,
)
from posecascade.data.domain import (
    HAND21_JOINT_NAMES,
    AugmentationParams,
    AugmentationRanges,
    DatasetError,
    DatasetErrorCode,
    DepthFrame,
    HandPose,
    finger_joint_index,
)
from posecascade.data.meanpose import compute_mean_pose
from posecascade.data.storage import (
    MANIFEST_NAME,
    LabeledDataset,
    decode_frame,
    encode_frame,
    load_dataset,
    load_frame,
    save_dataset,
)
from posecascade.data.synthetic import (
    SyntheticHandSpec,
    generate_synthetic_dataset,
    hand_bones,
    pose_hand,
    synthesize,
)
from posecascade.geometry.domain import (
    CameraIntrinsics,
    CubeSpec,
    WorldPoint,
    pose_world_to_normalized,
    project_points,
    world_to_patch,
)


def test_hand21_joint_order():
    assert len(HAND21_JOINT_NAMES) == 21
    assert HAND21_JOINT_NAMES[0] == "palm"
    assert HAND21_JOINT_NAMES[finger_joint_index(0, 0)] == "thumb_root"
    assert HAND21_JOINT_NAMES[finger_joint_index(4, 3)] == "pinky_tip"


def test_hand_pose_rejects_bad_shapes():
    with pytest.raises(DatasetError) as error:
        HandPose(np.zeros((21, 2)))
    assert error.value.code == DatasetErrorCode.invalid_pose
    with pytest.raises(DatasetError):
        HandPose(np.full((21, 3), np.nan))


####################################################################################################
### SYNTHETIC HANDS ################################################################################
####################################################################################################


def _rest_pose(spec: SyntheticHandSpec, flexion: float = 0.0) -> np.ndarray:
    return pose_hand(
        spec,
        np.full((5, 3), flexion),
        np.zeros(5),
        Rotation.identity(),
        np.zeros(3),
    )


def test_forward_kinematics_keeps_bone_lengths(hand_spec: SyntheticHandSpec):
    joints = _rest_pose(hand_spec, flexion=0.4)
    for finger, lengths in enumerate(hand_spec.bone_lengths_mm):
        for bone, length in enumerate(lengths):
            parent = joints[finger_joint_index(finger, bone)]
            child = joints[finger_joint_index(finger, bone + 1)]
            assert np.linalg.norm(child - parent) == pytest.approx(length)


def test_flexion_curls_toward_positive_z(hand_spec: SyntheticHandSpec):
    flat = _rest_pose(hand_spec)
    curled = _rest_pose(hand_spec, flexion=0.5)
    tips = [finger_joint_index(finger, 3) for finger in range(5)]
    assert np.allclose(flat[tips, 2], 0.0)
    assert np.all(curled[tips, 2] > 0.0)


def test_hand_bones_form_a_tree():
    bones = hand_bones()
    assert len(bones) == 20
    children = [child for _, child in bones]
    assert sorted(children) == list(range(1, 21))


def test_synthesis_is_deterministic(hand_spec: SyntheticHandSpec, camera: CameraIntrinsics):
    first = synthesize(hand_spec, camera, count=3, seed=7)
    second = synthesize(hand_spec, camera, count=3, seed=7)
    other = synthesize(hand_spec, camera, count=3, seed=8)
    for a, b in zip(first.frames, second.frames):
        assert np.array_equal(a.depth, b.depth)
    for a, b in zip(first.poses, second.poses):
        assert np.array_equal(a.joints, b.joints)
    assert not np.array_equal(first.poses[0].joints, other.poses[0].joints)


def test_synthetic_joints_land_inside_the_frame(small_dataset: LabeledDataset):
    for frame, pose in zip(small_dataset.frames, small_dataset.poses):
        assert pose.joint_count == 21
        uvd = project_points(pose.joints, small_dataset.camera)
        assert np.all(uvd[:, 0] >= 0) and np.all(uvd[:, 0] <= frame.width - 1)
        assert np.all(uvd[:, 1] >= 0) and np.all(uvd[:, 1] <= frame.height - 1)
        assert np.count_nonzero(frame.depth) > 50


def test_rendered_palm_is_near_its_joint(small_dataset: LabeledDataset):
    for frame, pose in zip(small_dataset.frames, small_dataset.poses):
        u, v, d = project_points(pose.joints[0], small_dataset.camera)
        rendered = float(frame.depth[int(round(v)), int(round(u))])
        # The palm sphere (or a finger in front of it) covers the palm pixel.
        assert 0 < rendered <= d + 1


def test_hand_that_cannot_fit_is_rejected(camera: CameraIntrinsics):
    spec = SyntheticHandSpec(translation_z_mm=(90.0, 100.0))
    with pytest.raises(DatasetError) as error:
        synthesize(spec, camera, count=1, seed=0)
    assert error.value.code == DatasetErrorCode.invalid_spec


def test_synthesis_needs_at_least_one_frame(
    hand_spec: SyntheticHandSpec, camera: CameraIntrinsics
):
    with pytest.raises(DatasetError) as error:
        synthesize(hand_spec, camera, count=0, seed=0)
    assert error.value.code == DatasetErrorCode.empty_dataset


####################################################################################################
### STORAGE ########################################################################################
####################################################################################################


def test_frame_encoding_is_exact(small_dataset: LabeledDataset):
    frame, pose = small_dataset.frames[0], small_dataset.poses[0]
    content = encode_frame(frame, pose)
    decoded_frame, decoded_pose = decode_frame(content)
    assert np.array_equal(decoded_frame.depth, frame.depth)
    assert np.array_equal(decoded_pose.joints, pose.joints)
    assert encode_frame(decoded_frame, decoded_pose) == content


def test_corrupted_frames_give_distinct_errors(small_dataset: LabeledDataset):
    content = encode_frame(small_dataset.frames[0], small_dataset.poses[0])
    with pytest.raises(DatasetError) as error:
        decode_frame(b"XXXX" + content[4:])
    assert error.value.code == DatasetErrorCode.bad_magic
    with pytest.raises(DatasetError) as error:
        decode_frame(content[:-1])
    assert error.value.code == DatasetErrorCode.size_mismatch
    with pytest.raises(DatasetError) as error:
        decode_frame(content + b"\x00")
    assert error.value.code == DatasetErrorCode.size_mismatch


def test_dataset_round_trip(small_dataset: LabeledDataset, tmp_path: pathlib.Path):
    manifest = save_dataset(small_dataset, tmp_path / "set")
    assert manifest.name == MANIFEST_NAME
    loaded = load_dataset(manifest)
    assert loaded.camera == small_dataset.camera
    assert len(loaded) == len(small_dataset)
    for a, b in zip(loaded.frames, small_dataset.frames):
        assert np.array_equal(a.depth, b.depth)
    for a, b in zip(loaded.poses, small_dataset.poses):
        assert np.array_equal(a.joints, b.joints)


def test_generated_manifests_are_identical(
    hand_spec: SyntheticHandSpec, camera: CameraIntrinsics, tmp_path: pathlib.Path
):
    first = generate_synthetic_dataset(hand_spec, camera, 2, 5, tmp_path / "a")
    second = generate_synthetic_dataset(hand_spec, camera, 2, 5, tmp_path / "b")
    assert first.read_bytes() == second.read_bytes()
    for name in ("frame_000000.prdf", "frame_000001.prdf"):
        a = (tmp_path / "a" / "frames" / name).read_bytes()
        assert a == (tmp_path / "b" / "frames" / name).read_bytes()


def test_missing_files_are_reported(small_dataset: LabeledDataset, tmp_path: pathlib.Path):
    manifest = save_dataset(small_dataset.subset([0, 1]), tmp_path)
    (tmp_path / "frames" / "frame_000001.prdf").unlink()
    with pytest.raises(DatasetError) as error:
        load_dataset(manifest)
    assert error.value.code == DatasetErrorCode.missing_file
    assert "frame_000001" in str(error.value)
    with pytest.raises(DatasetError) as error:
        load_frame(tmp_path / "nothing.prdf")
    assert error.value.code == DatasetErrorCode.missing_file


def test_bad_manifest_header(tmp_path: pathlib.Path):
    manifest = tmp_path / MANIFEST_NAME
    manifest.write_text("not a camera\nframes/frame_000000.prdf\n", encoding="utf-8")
    with pytest.raises(DatasetError) as error:
        load_dataset(manifest)
    assert error.value.code == DatasetErrorCode.bad_manifest


####################################################################################################
### AUGMENTATION ###################################################################################
####################################################################################################


def test_draws_stay_within_ranges(rng: np.random.Generator):
    narrow = AugmentationRanges(
        scale_min=0.95, scale_max=1.0, translation_px=2.0, rotation_deg=15.0
    )
    for ranges in (AugmentationRanges(), narrow):
        for _ in range(10_000):
            params = draw_augmentation(ranges, rng)
            assert ranges.scale_min <= params.scale <= ranges.scale_max
            assert abs(params.translation_u) <= ranges.translation_px
            assert abs(params.translation_v) <= ranges.translation_px
            assert abs(params.rotation_deg) <= ranges.rotation_deg


def test_patch_transform_inverts(rng: np.random.Generator):
    params = draw_augmentation(AugmentationRanges(), rng)
    points = rng.uniform(0, 96, size=(20, 2))
    moved = transform_patch_points(points, params, 96)
    assert np.allclose(inverse_patch_points(moved, params, 96), points)


def test_identity_augmentation_changes_nothing(rng: np.random.Generator):
    patch = Tensor(rng.uniform(-1, 1, size=(1, 1, 8, 8)))
    out = augment_patch(patch, AugmentationParams())
    assert np.array_equal(out.data, patch.data)
    assert out is not patch


def test_half_turn_twice_is_the_identity(rng: np.random.Generator, camera: CameraIntrinsics):
    half_turn = AugmentationParams(rotation_deg=180.0)
    patch = Tensor(rng.uniform(-1, 1, size=(1, 1, 32, 32)))
    once = augment_patch(patch, half_turn)
    assert np.array_equal(once.data[0, 0], patch.data[0, 0, ::-1, ::-1])
    assert np.array_equal(augment_patch(once, half_turn).data, patch.data)

    cube = CubeSpec(center=WorldPoint(x=0.0, y=0.0, z=500.0))
    pose = HandPose(cube.center.as_array() + rng.uniform(-60, 60, size=(21, 3)))
    once_pose = augment_pose(pose, cube, camera, half_turn, 32)
    twice = augment_pose(once_pose, cube, camera, half_turn, 32)
    assert np.allclose(twice.joints, pose.joints, rtol=0.0, atol=1e-9)


def test_landmarks_follow_the_patch_content(rng: np.random.Generator):
    """A marked 3×3 block of cells, moved by the patch transform, still covers the cell that
    contains the transformed block center."""
    size = 64
    ranges = AugmentationRanges()
    checked = 0
    for _ in range(200):
        params = draw_augmentation(ranges, rng)
        row, col = (int(value) for value in rng.integers(size // 2 - 6, size // 2 + 6, size=2))
        data = np.ones((1, 1, size, size))
        data[0, 0, row - 1 : row + 2, col - 1 : col + 2] = -1.0
        moved = augment_patch(Tensor(data, dtype=np.float64), params).data[0, 0]

        landmark = np.array([col + 0.5, row + 0.5])
        u, v = transform_patch_points(landmark, params, size)
        assert 0 <= u < size and 0 <= v < size
        # Per axis, the marked cell is within half a pixel of the transformed landmark.
        cell_u, cell_v = int(np.floor(u)), int(np.floor(v))
        assert abs(cell_u + 0.5 - u) <= 0.5 and abs(cell_v + 0.5 - v) <= 0.5
        assert moved[cell_v, cell_u] == -1.0
        # Marked cells never drift further than the scaled block around the landmark.
        marked_v, marked_u = np.nonzero(moved == -1.0)
        reach = params.scale * 1.5 * np.sqrt(2.0) + np.sqrt(0.5)
        assert np.all(np.hypot(marked_u + 0.5 - u, marked_v + 0.5 - v) <= reach + 1e-9)
        checked += 1
    assert checked == 200


def test_pose_augmentation_matches_the_patch_transform(
    rng: np.random.Generator, camera: CameraIntrinsics
):
    cube = CubeSpec(center=WorldPoint(x=5.0, y=-3.0, z=500.0))
    pose = HandPose(cube.center.as_array() + rng.uniform(-60, 60, size=(21, 3)))
    params = draw_augmentation(AugmentationRanges(), rng)
    moved = augment_pose(pose, cube, camera, params, 96)

    before = world_to_patch(pose.joints, cube, camera, 96)
    after = world_to_patch(moved.joints, cube, camera, 96)
    assert np.allclose(after[:, :2], transform_patch_points(before[:, :2], params, 96))
    assert np.allclose(after[:, 2], before[:, 2])


def test_sample_augmentation_moves_every_pose_alike(
    rng: np.random.Generator, camera: CameraIntrinsics
):
    cube = CubeSpec(center=WorldPoint(x=0.0, y=0.0, z=500.0))
    pose = HandPose(cube.center.as_array() + rng.uniform(-60, 60, size=(21, 3)))
    params = draw_augmentation(AugmentationRanges(), rng)
    patch = Tensor(rng.uniform(-1, 1, size=(1, 1, 32, 32)))
    _, (first, second) = augment_sample(patch, [pose, pose], cube, camera, params)
    assert np.array_equal(first.joints, second.joints)

    with pytest.raises(DatasetError) as error:
        augment_sample(Tensor(np.zeros((1, 1, 32, 16))), [pose], cube, camera, params)
    assert error.value.code == DatasetErrorCode.invalid_frame


####################################################################################################
### MEAN POSE ######################################################################################
####################################################################################################


def test_mean_pose_is_placed_in_each_cube(rng: np.random.Generator):
    offsets = rng.uniform(-60, 60, size=(21, 3))
    cubes = [
        CubeSpec(center=WorldPoint(x=float(x), y=0.0, z=500.0)) for x in (-20.0, 0.0, 35.0)
    ]
    poses = [HandPose(cube.center.as_array() + offsets) for cube in cubes]
    mean = compute_mean_pose(poses, cubes)
    assert mean.joint_count == 21
    assert np.allclose(mean.normalized.reshape(-1), pose_world_to_normalized(poses[0], cubes[0]))
    target = CubeSpec(center=WorldPoint(x=1.0, y=2.0, z=600.0))
    assert np.allclose(mean.to_world(target).joints, target.center.as_array() + offsets)


def test_mean_pose_needs_poses():
    with pytest.raises(DatasetError) as error:
        compute_mean_pose([], [])
    assert error.value.code == DatasetErrorCode.empty_dataset


def test_depth_frame_validates_shape():
    with pytest.raises(DatasetError) as error:
        DepthFrame(4, 4, np.zeros((3, 4), dtype=np.uint16))
    assert error.value.code == DatasetErrorCode.invalid_frame

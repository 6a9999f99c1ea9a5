"""Iterative refinement: the Init-CNN gives the stage-0 pose, then the one Pose-REN model is applied
T times, each time cropping its regions around the previous pose.

``refine_once`` is the only place a refinement step happens, for inference as well as for
training-set augmentation, so both produce the same poses for the same model and inputs.
"""

import collections.abc
import dataclasses

import numpy as np

from posecascade.autodiff.tensor import Tensor
from posecascade.cascade.domain import CascadeConfig, CascadeError, CascadeErrorCode, TrainedCascade
from posecascade.data.domain import DepthFrame, HandPose
from posecascade.data.meanpose import MeanPose
from posecascade.geometry.domain import (
    CameraIntrinsics,
    CubeSpec,
    compute_hand_center,
    extract_cube_patch,
    pose_normalized_to_world,
)
from posecascade.model.domain import NetworkKind, ParamSet, PoseRenConfig
from posecascade.model.network import check_params, init_cnn_forward, posren_forward
from posecascade.utils import parallel_map


@dataclasses.dataclass(frozen=True, eq=False)
class PreparedFrame:
    patch: Tensor
    """1×1×S×S."""
    cube: CubeSpec


def prepare_frame(
    frame: DepthFrame, cam: CameraIntrinsics, patch_size: int, config: CascadeConfig
) -> PreparedFrame:
    """Cube around the hand centroid (fixed for every stage of this frame) and its patch."""
    center = compute_hand_center(frame, cam, config.valid_depth_range)
    cube = CubeSpec(center=center, size=config.cube_size_mm)
    return PreparedFrame(extract_cube_patch(frame, cube, cam, patch_size), cube)


def prepare_frames(
    frames: collections.abc.Sequence[DepthFrame],
    cam: CameraIntrinsics,
    patch_size: int,
    config: CascadeConfig,
) -> list[PreparedFrame]:
    return parallel_map(lambda frame: prepare_frame(frame, cam, patch_size, config), frames)


def _stack(patches: collections.abc.Sequence[Tensor]) -> Tensor:
    return Tensor(np.concatenate([patch.data for patch in patches]), dtype=patches[0].dtype)


def _chunks(count: int, size: int) -> list[range]:
    return [range(start, min(start + size, count)) for start in range(0, count, size)]


def _to_world(
    normalized: np.ndarray, cubes: collections.abc.Sequence[CubeSpec], schema: str
) -> list[HandPose]:
    return [pose_normalized_to_world(row, cube, schema) for row, cube in zip(normalized, cubes)]


def predict_init_poses(
    patches: collections.abc.Sequence[Tensor],
    cubes: collections.abc.Sequence[CubeSpec],
    params: ParamSet,
    net_config: PoseRenConfig,
    batch_size: int,
    schema: str = "hand21",
) -> list[HandPose]:
    poses: list[HandPose] = []
    for chunk in _chunks(len(patches), batch_size):
        out = init_cnn_forward(_stack([patches[i] for i in chunk]), params, net_config)
        poses += _to_world(out.data.astype(np.float64), [cubes[i] for i in chunk], schema)
    return poses


def refine_once(
    patches: collections.abc.Sequence[Tensor],
    poses: collections.abc.Sequence[HandPose],
    cubes: collections.abc.Sequence[CubeSpec],
    cam: CameraIntrinsics,
    params: ParamSet,
    net_config: PoseRenConfig,
    batch_size: int,
) -> list[HandPose]:
    """One Pose-REN step (inference mode) for every item, in chunks of ``batch_size``."""
    for pose in poses:
        if pose.joint_count != net_config.joint_count:
            raise CascadeError(
                CascadeErrorCode.joint_mismatch,
                f"pose has {pose.joint_count} joints, model expects {net_config.joint_count}",
            )
    refined: list[HandPose] = []
    for chunk in _chunks(len(patches), batch_size):
        chunk_cubes = [cubes[i] for i in chunk]
        out, _ = posren_forward(
            _stack([patches[i] for i in chunk]),
            [poses[i] for i in chunk],
            chunk_cubes,
            cam,
            params,
            net_config,
        )
        refined += _to_world(out.data.astype(np.float64), chunk_cubes, poses[chunk[0]].schema)
    return refined


def infer_batch(
    frames: collections.abc.Sequence[DepthFrame],
    cam: CameraIntrinsics,
    cascade: TrainedCascade,
    iterations: int,
    initializer: collections.abc.Sequence[HandPose] | MeanPose | None = None,
) -> list[list[HandPose]]:
    """Poses per stage (outer index 0..T) and frame (inner index).

    ``initializer`` replaces the Init-CNN at stage 0: one pose per frame, or a mean pose placed in
    each frame's cube.
    """
    if iterations < 0:
        raise CascadeError(CascadeErrorCode.invalid_iterations, f"T = {iterations}")
    net_config = cascade.net_config
    batch_size = cascade.config.batch_size
    check_params(cascade.init_params, net_config, NetworkKind.init_cnn)
    check_params(cascade.ren_params, net_config, NetworkKind.pose_ren)
    prepared = prepare_frames(frames, cam, net_config.backbone.input_size, cascade.config)
    patches = [item.patch for item in prepared]
    cubes = [item.cube for item in prepared]

    if initializer is None:
        current = predict_init_poses(patches, cubes, cascade.init_params, net_config, batch_size)
    elif isinstance(initializer, MeanPose):
        current = [initializer.to_world(cube) for cube in cubes]
    else:
        current = list(initializer)
        if len(current) != len(frames):
            raise CascadeError(
                CascadeErrorCode.joint_mismatch,
                f"{len(current)} initial poses for {len(frames)} frames",
            )
    for pose in current:
        if pose.joint_count != net_config.joint_count:
            raise CascadeError(
                CascadeErrorCode.joint_mismatch,
                f"initial pose has {pose.joint_count} joints, model expects "
                f"{net_config.joint_count}",
            )

    stages = [current]
    for _ in range(iterations):
        current = refine_once(
            patches, current, cubes, cam, cascade.ren_params, net_config, batch_size
        )
        stages.append(current)
    return stages


def infer(
    frame: DepthFrame, cam: CameraIntrinsics, cascade: TrainedCascade, iterations: int = 3
) -> tuple[HandPose, list[HandPose]]:
    stages = infer_batch([frame], cam, cascade, iterations)
    per_stage = [poses[0] for poses in stages]
    return per_stage[-1], per_stage


def infer_with_initializer(
    frame: DepthFrame,
    cam: CameraIntrinsics,
    cascade: TrainedCascade,
    iterations: int,
    init_pose: HandPose,
) -> tuple[HandPose, list[HandPose]]:
    stages = infer_batch([frame], cam, cascade, iterations, [init_pose])
    per_stage = [poses[0] for poses in stages]
    return per_stage[-1], per_stage

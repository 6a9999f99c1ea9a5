"""In-plane similarity augmentation of cube patches and of the poses that go with them.

Patch coordinates are continuous: cell ``(row i, column j)`` covers ``[j, j+1) × [i, i+1)`` and the
pivot is the patch center ``(S/2, S/2)``. A point ``p`` moves to ``c + s·R(θ)·(p − c) + t``.
"""

import collections.abc
import math

import numpy as np
import numpy.typing as npt

from posecascade.autodiff.tensor import Tensor
from posecascade.data.domain import (
    AugmentationParams,
    AugmentationRanges,
    DatasetError,
    DatasetErrorCode,
    HandPose,
)
from posecascade.geometry.domain import CameraIntrinsics, CubeSpec, patch_to_world, world_to_patch


def draw_augmentation(ranges: AugmentationRanges, rng: np.random.Generator) -> AugmentationParams:
    return AugmentationParams(
        scale=float(rng.uniform(ranges.scale_min, ranges.scale_max)),
        translation_u=float(rng.uniform(-ranges.translation_px, ranges.translation_px)),
        translation_v=float(rng.uniform(-ranges.translation_px, ranges.translation_px)),
        rotation_deg=float(rng.uniform(-ranges.rotation_deg, ranges.rotation_deg)),
        seed=int(rng.integers(0, 2**63 - 1)),
    )


def _linear_part(params: AugmentationParams) -> npt.NDArray[np.float64]:
    theta = math.radians(params.rotation_deg)
    cos, sin = math.cos(theta), math.sin(theta)
    return params.scale * np.array([[cos, -sin], [sin, cos]])


def transform_patch_points(
    points: npt.ArrayLike, params: AugmentationParams, patch_size: int
) -> npt.NDArray[np.float64]:
    """Move (..., 2) patch coordinates ``(u, v)`` forward through the transform."""
    uv = np.asarray(points, dtype=np.float64)
    if params.is_identity:
        return uv.copy()
    center = patch_size / 2.0
    shift = np.array([params.translation_u, params.translation_v])
    return (uv - center) @ _linear_part(params).T + center + shift


def inverse_patch_points(
    points: npt.ArrayLike, params: AugmentationParams, patch_size: int
) -> npt.NDArray[np.float64]:
    uv = np.asarray(points, dtype=np.float64)
    if params.is_identity:
        return uv.copy()
    center = patch_size / 2.0
    shift = np.array([params.translation_u, params.translation_v])
    return (uv - center - shift) @ np.linalg.inv(_linear_part(params)).T + center


def augment_patch(patch: Tensor, params: AugmentationParams) -> Tensor:
    """Nearest-neighbor resampling of an N×C×S×S patch; cells sourced from outside become +1."""
    size = patch.shape[-1]
    if params.is_identity:
        return patch.detach()
    cells = np.arange(size) + 0.5
    grid = np.stack(np.meshgrid(cells, cells), axis=-1)  # (v, u) index order, (u, v) values
    source = np.floor(inverse_patch_points(grid, params, size)).astype(np.int64)
    col, row = source[..., 0], source[..., 1]
    inside = (col >= 0) & (col < size) & (row >= 0) & (row < size)
    sampled = patch.data[..., np.clip(row, 0, size - 1), np.clip(col, 0, size - 1)]
    out = np.where(inside, sampled, np.asarray(1.0, dtype=patch.dtype))
    return Tensor(out, dtype=patch.dtype)


def augment_pose(
    pose: HandPose,
    cube: CubeSpec,
    cam: CameraIntrinsics,
    params: AugmentationParams,
    patch_size: int,
) -> HandPose:
    """Apply the patch transform to the joints' patch coordinates; joint depths are kept."""
    if params.is_identity:
        return HandPose(pose.joints.copy(), pose.schema)
    puvd = world_to_patch(pose.joints, cube, cam, patch_size)
    puvd[:, :2] = transform_patch_points(puvd[:, :2], params, patch_size)
    return HandPose(patch_to_world(puvd, cube, cam, patch_size), pose.schema)


def augment_sample(
    patch: Tensor,
    poses: collections.abc.Sequence[HandPose],
    cube: CubeSpec,
    cam: CameraIntrinsics,
    params: AugmentationParams,
) -> tuple[Tensor, list[HandPose]]:
    """Transform a square patch and, consistently, every pose attached to it (input and ground
    truth receive the same transform)."""
    size = patch.shape[-1]
    if patch.shape[-2] != size:
        raise DatasetError(
            DatasetErrorCode.invalid_frame, f"patch must be square, got {patch.shape}"
        )
    return augment_patch(patch, params), [
        augment_pose(pose, cube, cam, params, size) for pose in poses
    ]

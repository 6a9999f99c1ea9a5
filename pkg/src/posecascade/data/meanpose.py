import collections.abc
import dataclasses

import numpy as np
import numpy.typing as npt

from posecascade.data.domain import DatasetError, DatasetErrorCode, HandPose
from posecascade.geometry.domain import CubeSpec, pose_normalized_to_world, pose_world_to_normalized


@dataclasses.dataclass(frozen=True, eq=False)
class MeanPose:
    """Per-joint mean of training poses in cube-normalized coordinates, shape (J, 3)."""

    normalized: npt.NDArray[np.float64]
    schema: str = "hand21"

    @property
    def joint_count(self) -> int:
        return int(self.normalized.shape[0])

    def to_world(self, cube: CubeSpec) -> HandPose:
        return pose_normalized_to_world(self.normalized, cube, self.schema)


def compute_mean_pose(
    poses: collections.abc.Sequence[HandPose], cubes: collections.abc.Sequence[CubeSpec]
) -> MeanPose:
    """Average each pose relative to its own frame's cube, so the result can be placed in any
    other frame with ``MeanPose.to_world``."""
    if not poses:
        raise DatasetError(DatasetErrorCode.empty_dataset, "no poses to average")
    if len(poses) != len(cubes):
        raise DatasetError(DatasetErrorCode.invalid_pose, f"{len(poses)} poses, {len(cubes)} cubes")
    normalized = np.stack(
        [pose_world_to_normalized(pose, cube) for pose, cube in zip(poses, cubes, strict=True)]
    )
    mean = normalized.mean(axis=0).reshape(-1, 3)
    return MeanPose(mean, poses[0].schema)

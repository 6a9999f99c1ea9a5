import dataclasses
import enum

import numpy as np
import numpy.typing as npt
import pydantic

from posecascade.utils import CodedError


FINGERS = ("thumb", "index", "middle", "ring", "pinky")
FINGER_JOINTS = ("root", "pip", "dip", "tip")

HAND21_JOINT_NAMES: tuple[str, ...] = ("palm",) + tuple(
    f"{finger}_{joint}" for finger in FINGERS for joint in FINGER_JOINTS
)
"""Joint order of the 21-joint hand: the palm, then root (MCP), PIP, DIP and tip of each finger."""


def finger_joint_index(finger: int, joint: int) -> int:
    """Index in ``HAND21_JOINT_NAMES`` of joint ``joint`` (0=root … 3=tip) of finger ``finger``."""
    return 1 + len(FINGER_JOINTS) * finger + joint


class DatasetErrorCode(str, enum.Enum):
    bad_magic = "File does not start with the PRDF magic bytes"
    size_mismatch = "File size does not match its header"
    missing_file = "Frame file referenced by the manifest does not exist"
    bad_manifest = "Manifest is malformed"
    unwritable_path = "Cannot write to the dataset location"
    empty_dataset = "The dataset is empty"
    invalid_frame = "Invalid depth frame"
    invalid_pose = "Invalid hand pose"
    invalid_spec = "Synthetic hand cannot be rendered inside the frame"


class DatasetError(CodedError):
    pass


@dataclasses.dataclass(frozen=True, eq=False)
class DepthFrame:
    """A depth image in millimeters, 0 meaning missing. ``depth`` has shape (height, width)."""

    width: int
    height: int
    depth: npt.NDArray[np.uint16]

    def __post_init__(self) -> None:
        if self.depth.dtype != np.uint16 or self.depth.shape != (self.height, self.width):
            raise DatasetError(
                DatasetErrorCode.invalid_frame,
                f"expected uint16 ({self.height}, {self.width}), "
                f"got {self.depth.dtype} {self.depth.shape}",
            )


@dataclasses.dataclass(frozen=True, eq=False)
class HandPose:
    """J world-space joints in millimeters, shape (J, 3)."""

    joints: npt.NDArray[np.float64]
    schema: str = "hand21"

    def __post_init__(self) -> None:
        joints = np.asarray(self.joints, dtype=np.float64)
        if joints.ndim != 2 or joints.shape[1] != 3 or joints.shape[0] < 1:
            raise DatasetError(DatasetErrorCode.invalid_pose, f"shape {joints.shape}")
        if not np.all(np.isfinite(joints)):
            raise DatasetError(DatasetErrorCode.invalid_pose, "non-finite coordinates")
        object.__setattr__(self, "joints", joints)

    @property
    def joint_count(self) -> int:
        return int(self.joints.shape[0])


class AugmentationRanges(pydantic.BaseModel):
    """Sampling ranges for on-the-fly data augmentation."""

    model_config = pydantic.ConfigDict(frozen=True)

    scale_min: float = pydantic.Field(default=0.9, gt=0.0)
    scale_max: float = pydantic.Field(default=1.1, gt=0.0)
    translation_px: float = pydantic.Field(default=10.0, ge=0.0)
    rotation_deg: float = pydantic.Field(default=180.0, ge=0.0, le=180.0)


class AugmentationParams(pydantic.BaseModel):
    """One in-plane similarity transform of a patch, about the patch center."""

    model_config = pydantic.ConfigDict(frozen=True)

    scale: float = 1.0
    translation_u: float = 0.0
    translation_v: float = 0.0
    rotation_deg: float = 0.0
    seed: int | None = None

    @property
    def is_identity(self) -> bool:
        return (
            self.scale == 1.0
            and self.translation_u == 0.0
            and self.translation_v == 0.0
            and self.rotation_deg == 0.0
        )

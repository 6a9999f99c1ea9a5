"""Configuration and value types of the Init-CNN and Pose-REN networks."""

import dataclasses
import enum
import typing

import pydantic

from posecascade.autodiff.tensor import Tensor
from posecascade.data.domain import FINGERS, finger_joint_index
from posecascade.utils import CodedError


ParamSet = dict[str, Tensor]
"""Named parameters, in creation order."""


class ModelErrorCode(str, enum.Enum):
    invalid_config = "Invalid network configuration"
    param_mismatch = "Parameters do not match the network configuration"
    guide_mismatch = "Guide pose does not match the guide schema"
    wrong_input = "Network input has the wrong shape"


class ModelError(CodedError):
    pass


class NetworkKind(str, enum.Enum):
    init_cnn = "init_cnn"
    pose_ren = "pose_ren"


class BackboneConfig(pydantic.BaseModel):
    """Six convolutions, a pool after every second one, and residual skips between pools.

    A residual tap ``(source, destination)`` adds the output of pool ``source`` to the output of
    the last convolution before pool ``destination`` (then applies the ReLU). Pools are numbered
    1 to 3.
    """

    model_config = pydantic.ConfigDict(frozen=True)

    conv_channels: tuple[int, ...] = (16, 16, 32, 32, 64, 64)
    kernel_size: int = pydantic.Field(default=3, ge=1)
    pool_window: int = pydantic.Field(default=2, ge=1)
    input_size: int = pydantic.Field(default=96, ge=2)
    residual_taps: tuple[tuple[int, int], ...] = ((1, 2), (2, 3))

    @pydantic.model_validator(mode="after")
    def _check(self) -> typing.Self:
        if len(self.conv_channels) != 6 or min(self.conv_channels) < 1:
            raise ValueError(f"need 6 positive conv channel counts, got {self.conv_channels}")
        if self.kernel_size % 2 != 1:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.input_size % self.pool_window**3 != 0:
            raise ValueError(
                f"input_size {self.input_size} not divisible by {self.pool_window}³"
            )
        for tap in self.residual_taps:
            if tap not in ((1, 2), (2, 3)):
                raise ValueError(f"residual tap {tap} must bridge consecutive pools (1,2) or (2,3)")
        if len(set(self.residual_taps)) != len(self.residual_taps):
            raise ValueError("duplicate residual taps")
        return self

    @property
    def feat_size(self) -> int:
        return self.input_size // self.pool_window**3

    @property
    def feat_channels(self) -> int:
        return self.conv_channels[-1]


SchemaPreset = typing.Literal["default", "four", "nine", "tiny", "custom"]


class GuideSchema(pydantic.BaseModel):
    """Which joints guide the region crops and how the regions are fused per finger.

    ``finger_groups`` holds, for each of the 5 fingers, positions into ``guide_indices``. Position 0
    is the palm guide and belongs to every group; every other position belongs to exactly one.
    """

    model_config = pydantic.ConfigDict(frozen=True)

    joint_count: int = pydantic.Field(default=21, ge=1)
    guide_indices: tuple[int, ...]
    finger_groups: tuple[tuple[int, ...], ...]

    @pydantic.model_validator(mode="after")
    def _check(self) -> typing.Self:
        m = len(self.guide_indices)
        if m < 1 or any(not 0 <= i < self.joint_count for i in self.guide_indices):
            raise ValueError(f"guide indices {self.guide_indices} not in [0, {self.joint_count})")
        if len(self.finger_groups) != len(FINGERS):
            raise ValueError(f"need {len(FINGERS)} finger groups, got {len(self.finger_groups)}")
        members: list[int] = []
        for group in self.finger_groups:
            if not group or group[0] != 0:
                raise ValueError(f"finger group {group} must start with the palm position 0")
            members.extend(group[1:])
        if sorted(members) != list(range(1, m)):
            raise ValueError("every non-palm guide must belong to exactly one finger group")
        return self

    @property
    def guide_count(self) -> int:
        return len(self.guide_indices)


def guide_schema(
    preset: SchemaPreset = "default",
    joint_count: int = 21,
    guide_indices: typing.Sequence[int] | None = None,
    finger_groups: typing.Sequence[typing.Sequence[int]] | None = None,
) -> GuideSchema:
    """Named guide-joint layouts.

    ``default``: palm plus root and tip of each finger (11 guides, 3 per finger group).
    ``four``: palm plus the roots of thumb, middle and pinky.
    ``nine``: palm, thumb tip, roots and tips of index/middle/ring, pinky root.
    ``tiny``: the 6-joint verification hand (palm plus one joint per finger for three fingers).
    ``custom``: ``guide_indices`` and ``finger_groups`` as given.
    """
    root, tip = 0, 3
    if preset == "custom":
        if guide_indices is None or finger_groups is None:
            raise ModelError(
                ModelErrorCode.invalid_config, "custom schema needs indices and groups"
            )
        return GuideSchema(
            joint_count=joint_count,
            guide_indices=tuple(guide_indices),
            finger_groups=tuple(tuple(group) for group in finger_groups),
        )
    if preset == "tiny":
        return GuideSchema(
            joint_count=6,
            guide_indices=(0, 1, 2, 3),
            finger_groups=((0, 1), (0, 2), (0, 3), (0,), (0,)),
        )
    if joint_count != 21:
        raise ModelError(ModelErrorCode.invalid_config, f"preset {preset!r} needs 21 joints")
    if preset == "default":
        indices = [0]
        for finger in range(len(FINGERS)):
            indices += [finger_joint_index(finger, root), finger_joint_index(finger, tip)]
        groups = tuple((0, 1 + 2 * f, 2 + 2 * f) for f in range(len(FINGERS)))
        return GuideSchema(guide_indices=tuple(indices), finger_groups=groups)
    if preset == "four":
        indices = (0, finger_joint_index(0, root), finger_joint_index(2, root),
                   finger_joint_index(4, root))
        return GuideSchema(
            guide_indices=indices, finger_groups=((0, 1), (0,), (0, 2), (0,), (0, 3))
        )
    if preset == "nine":
        indices = (
            0,
            finger_joint_index(0, tip),
            finger_joint_index(1, root),
            finger_joint_index(1, tip),
            finger_joint_index(2, root),
            finger_joint_index(2, tip),
            finger_joint_index(3, root),
            finger_joint_index(3, tip),
            finger_joint_index(4, root),
        )
        return GuideSchema(
            guide_indices=indices,
            finger_groups=((0, 1), (0, 2, 3), (0, 4, 5), (0, 6, 7), (0, 8)),
        )
    raise ModelError(ModelErrorCode.invalid_config, f"unknown schema preset {preset!r}")


class PoseRenConfig(pydantic.BaseModel):
    """Everything needed to build both networks: the shared backbone, the Init-CNN head width and
    the Pose-REN region/fusion layers."""

    model_config = pydantic.ConfigDict(frozen=True)

    backbone: BackboneConfig = BackboneConfig()
    schema_: GuideSchema = pydantic.Field(default_factory=guide_schema, alias="schema")
    region_w: int = pydantic.Field(default=7, ge=1)
    region_h: int = pydantic.Field(default=7, ge=1)
    fc_region_dim: int = pydantic.Field(default=2048, ge=1)
    fc_finger_dim: int = pydantic.Field(default=2048, ge=1)
    dropout_rate: float = pydantic.Field(default=0.5, ge=0.0, lt=1.0)
    flat_ensemble: bool = False
    flat_fc_dims: tuple[int, int] = (2304, 2048)
    grid_regions: bool = False
    init_fc_dim: int = pydantic.Field(default=2048, ge=1)

    @pydantic.model_validator(mode="after")
    def _check(self) -> typing.Self:
        feat = self.backbone.feat_size
        if self.region_w > feat or self.region_h > feat:
            raise ValueError(
                f"region {self.region_w}×{self.region_h} larger than feature map {feat}×{feat}"
            )
        if min(self.flat_fc_dims) < 1:
            raise ValueError(f"flat_fc_dims must be positive, got {self.flat_fc_dims}")
        return self

    @property
    def guides(self) -> GuideSchema:
        return self.schema_

    @property
    def joint_count(self) -> int:
        return self.schema_.joint_count

    @property
    def output_dim(self) -> int:
        return 3 * self.joint_count

    def to_json_dict(self) -> dict[str, typing.Any]:
        return self.model_dump(mode="json", by_alias=True)


@dataclasses.dataclass
class HiddenActivations:
    """Intermediate features of one Pose-REN forward pass.

    In flat-ensemble mode ``hbar1`` and ``h2`` are empty and ``hbar2`` is the fused feature.
    """

    h1: list[Tensor]
    hbar1: list[Tensor]
    h2: list[Tensor]
    hbar2: Tensor

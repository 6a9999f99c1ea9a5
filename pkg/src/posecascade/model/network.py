"""Forward passes of the Init-CNN and Pose-REN networks, parameter layout and initialization.

Both networks share the backbone parameter names (``conv{1..6}``, ``res{2,3}``), which is how the
trained Init-CNN initializes the Pose-REN backbone.
"""

import collections.abc
import math
import typing

import numpy as np
import numpy.typing as npt

from posecascade.autodiff import ops
from posecascade.autodiff.tensor import Tensor
from posecascade.data.domain import HandPose
from posecascade.geometry.domain import (
    CameraIntrinsics,
    CubeSpec,
    RegionWindow,
    compute_region_windows,
    grid_region_windows,
)
from posecascade.model.domain import (
    BackboneConfig,
    HiddenActivations,
    ModelError,
    ModelErrorCode,
    NetworkKind,
    ParamSet,
    PoseRenConfig,
)


ShapeMap = dict[str, tuple[int, ...]]

BACKBONE_PREFIXES = ("conv", "res")


####################################################################################################
###   PARAMETER LAYOUT   ###########################################################################
####################################################################################################


def _tap_sources(backbone: BackboneConfig) -> dict[int, int]:
    return {destination: source for source, destination in backbone.residual_taps}


def _backbone_shapes(backbone: BackboneConfig) -> ShapeMap:
    shapes: ShapeMap = {}
    k = backbone.kernel_size
    in_channels = 1
    for layer, channels in enumerate(backbone.conv_channels, start=1):
        shapes[f"conv{layer}.w"] = (channels, in_channels, k, k)
        shapes[f"conv{layer}.b"] = (channels,)
        in_channels = channels
    for destination, source in sorted(_tap_sources(backbone).items()):
        skip_channels = backbone.conv_channels[2 * source - 1]
        main_channels = backbone.conv_channels[2 * destination - 1]
        if skip_channels != main_channels:
            shapes[f"res{destination}.w"] = (main_channels, skip_channels, 1, 1)
            shapes[f"res{destination}.b"] = (main_channels,)
    return shapes


def _linear_shapes(shapes: ShapeMap, name: str, fan_in: int, fan_out: int) -> None:
    shapes[f"{name}.w"] = (fan_in, fan_out)
    shapes[f"{name}.b"] = (fan_out,)


def param_shapes(config: PoseRenConfig, network: NetworkKind) -> ShapeMap:
    """Name → shape of every parameter of ``network``, in a fixed order, without allocating."""
    backbone = config.backbone
    shapes = _backbone_shapes(backbone)
    if network == NetworkKind.init_cnn:
        flat = backbone.feat_channels * backbone.feat_size**2
        _linear_shapes(shapes, "fc1", flat, config.init_fc_dim)
        _linear_shapes(shapes, "out", config.init_fc_dim, config.output_dim)
        return shapes

    region_in = backbone.feat_channels * config.region_w * config.region_h
    schema = config.guides
    if config.flat_ensemble:
        region_dim, fused_dim = config.flat_fc_dims
        for j in range(schema.guide_count):
            _linear_shapes(shapes, f"region{j}", region_in, region_dim)
        _linear_shapes(shapes, "fuse", schema.guide_count * region_dim, fused_dim)
        _linear_shapes(shapes, "out", fused_dim, config.output_dim)
        return shapes

    for j in range(schema.guide_count):
        _linear_shapes(shapes, f"region{j}", region_in, config.fc_region_dim)
    for i, group in enumerate(schema.finger_groups):
        _linear_shapes(
            shapes, f"finger{i}", len(group) * config.fc_region_dim, config.fc_finger_dim
        )
    _linear_shapes(
        shapes, "out", len(schema.finger_groups) * config.fc_finger_dim, config.output_dim
    )
    return shapes


def param_count(params: ParamSet | ShapeMap) -> int:
    total = 0
    for value in params.values():
        shape = value.shape if isinstance(value, Tensor) else value
        total += math.prod(shape)
    return total


def init_params(
    config: PoseRenConfig,
    network: NetworkKind,
    seed: int,
    dtype: npt.DTypeLike = np.float32,
) -> ParamSet:
    """Weights uniform in ±sqrt(6 / (fan_in + fan_out)), biases zero."""
    rng = np.random.default_rng(seed)
    params: ParamSet = {}
    for name, shape in param_shapes(config, network).items():
        if name.endswith(".b"):
            values = np.zeros(shape)
        else:
            if len(shape) == 4:
                receptive = shape[2] * shape[3]
                fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
            else:
                fan_in, fan_out = shape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            values = rng.uniform(-limit, limit, size=shape)
        params[name] = Tensor(values, requires_grad=True, dtype=dtype)
    return params


def check_params(params: ParamSet, config: PoseRenConfig, network: NetworkKind) -> None:
    expected = param_shapes(config, network)
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ModelError(ModelErrorCode.param_mismatch, f"missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ModelError(
                ModelErrorCode.param_mismatch, f"{name}: {params[name].shape}, expected {shape}"
            )


def copy_backbone(source: ParamSet, target: ParamSet) -> None:
    """Overwrite the backbone parameters of ``target`` with copies of those in ``source``."""
    for name, tensor in source.items():
        if name.startswith(BACKBONE_PREFIXES):
            if name not in target or target[name].shape != tensor.shape:
                raise ModelError(ModelErrorCode.param_mismatch, f"backbone parameter {name}")
            target[name].data = tensor.data.astype(target[name].dtype, copy=True)


def clone_params(params: ParamSet) -> ParamSet:
    return {
        name: Tensor(t.data, requires_grad=t.requires_grad, dtype=t.dtype)
        for name, t in params.items()
    }


def layer_seed(seed: int, layer: int) -> int:
    """Independent dropout stream per (forward seed, layer)."""
    return int(np.random.SeedSequence([seed, layer]).generate_state(1, dtype=np.uint64)[0])


####################################################################################################
###   FORWARD PASSES   #############################################################################
####################################################################################################


def _check_patch(patch: Tensor, size: int) -> None:
    if len(patch.shape) != 4 or patch.shape[1:] != (1, size, size):
        raise ModelError(
            ModelErrorCode.wrong_input, f"expected N×1×{size}×{size}, got {patch.shape}"
        )


def backbone_forward(patch: Tensor, params: ParamSet, backbone: BackboneConfig) -> Tensor:
    """N×1×S×S patches → N×C6×(S/8)×(S/8) features."""
    _check_patch(patch, backbone.input_size)
    taps = _tap_sources(backbone)
    pad = backbone.kernel_size // 2
    pooled = {0: patch}
    x = patch
    for block in (1, 2, 3):
        for layer in (2 * block - 1, 2 * block):
            x = ops.conv2d(x, params[f"conv{layer}.w"], params[f"conv{layer}.b"], 1, pad)
            if layer == 2 * block and block in taps:
                skip = pooled[taps[block]]
                if f"res{block}.w" in params:
                    skip = ops.conv2d(skip, params[f"res{block}.w"], params[f"res{block}.b"])
                x = ops.residual_add(x, skip)
            x = ops.relu(x)
        x = ops.maxpool2d(x, backbone.pool_window, backbone.pool_window)
        pooled[block] = x
    return x


def init_cnn_forward(
    patch: Tensor,
    params: ParamSet,
    config: PoseRenConfig,
    training: bool = False,
    seed: int = 0,
) -> Tensor:
    """N×1×S×S patches → N×3J normalized poses."""
    features = ops.flatten(backbone_forward(patch, params, config.backbone))
    hidden = ops.relu(ops.linear(features, params["fc1.w"], params["fc1.b"]))
    hidden = ops.dropout(hidden, config.dropout_rate, training, layer_seed(seed, 0))
    return ops.linear(hidden, params["out.w"], params["out.b"])


def guide_windows(
    guide_poses: collections.abc.Sequence[HandPose],
    cubes: collections.abc.Sequence[CubeSpec],
    cam: CameraIntrinsics,
    config: PoseRenConfig,
) -> list[list[RegionWindow]]:
    """Region windows indexed ``[region][batch item]``."""
    schema = config.guides
    feat = config.backbone.feat_size
    for pose in guide_poses:
        if pose.joint_count != schema.joint_count:
            raise ModelError(
                ModelErrorCode.guide_mismatch,
                f"guide pose has {pose.joint_count} joints, schema expects {schema.joint_count}",
            )
    if config.grid_regions:
        grid = grid_region_windows(schema.guide_count, feat, config.region_w, config.region_h)
        return [[window] * len(guide_poses) for window in grid]
    per_item: list[list[RegionWindow]] = []
    for pose, cube in zip(guide_poses, cubes, strict=True):
        joints = pose.joints[list(schema.guide_indices)]
        per_item.append(
            compute_region_windows(
                joints, cube, cam, config.backbone.input_size, feat, config.region_w,
                config.region_h,
            )
        )
    return [list(region) for region in zip(*per_item, strict=True)]


def _as_list(value: typing.Any) -> list[typing.Any]:
    return list(value) if isinstance(value, collections.abc.Sequence) else [value]


def posren_forward(
    patch: Tensor,
    guide_pose: HandPose | collections.abc.Sequence[HandPose],
    cube: CubeSpec | collections.abc.Sequence[CubeSpec],
    cam: CameraIntrinsics,
    params: ParamSet,
    config: PoseRenConfig,
    training: bool = False,
    seed: int = 0,
) -> tuple[Tensor, HiddenActivations]:
    """Pose-REN: backbone, one crop per guide joint, per-region fc, per-finger fusion, global
    fusion and the final regression (no dropout on the last layer).

    ``guide_pose`` and ``cube`` are either single values (batch of one) or one per batch item.
    """
    guides: list[HandPose] = _as_list(guide_pose)
    cubes: list[CubeSpec] = _as_list(cube)
    if len(guides) != patch.shape[0] or len(cubes) != patch.shape[0]:
        raise ModelError(
            ModelErrorCode.guide_mismatch,
            f"{len(guides)} guides and {len(cubes)} cubes for a batch of {patch.shape[0]}",
        )
    features = backbone_forward(patch, params, config.backbone)
    windows = guide_windows(guides, cubes, cam, config)

    layer = 0
    h1: list[Tensor] = []
    for j, region_windows in enumerate(windows):
        crop = ops.flatten(ops.region_crop(features, region_windows))
        hidden = ops.relu(ops.linear(crop, params[f"region{j}.w"], params[f"region{j}.b"]))
        h1.append(ops.dropout(hidden, config.dropout_rate, training, layer_seed(seed, layer)))
        layer += 1

    hbar1: list[Tensor] = []
    h2: list[Tensor] = []
    if config.flat_ensemble:
        fused = ops.relu(ops.linear(ops.concat(h1, axis=1), params["fuse.w"], params["fuse.b"]))
        hbar2 = ops.dropout(fused, config.dropout_rate, training, layer_seed(seed, layer))
    else:
        for i, group in enumerate(config.guides.finger_groups):
            hbar1.append(ops.concat([h1[position] for position in group], axis=1))
            hidden = ops.relu(
                ops.linear(hbar1[-1], params[f"finger{i}.w"], params[f"finger{i}.b"])
            )
            h2.append(ops.dropout(hidden, config.dropout_rate, training, layer_seed(seed, layer)))
            layer += 1
        hbar2 = ops.concat(h2, axis=1)

    pose = ops.linear(hbar2, params["out.w"], params["out.b"])
    return pose, HiddenActivations(h1=h1, hbar1=hbar1, h2=h2, hbar2=hbar2)

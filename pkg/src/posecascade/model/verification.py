"""End-to-end gradient verification of Pose-REN on a tiny network (J=6, M=4, 32×32 patches)."""

import collections.abc

import numpy as np

from posecascade.autodiff import ops
from posecascade.autodiff.gradcheck import GradcheckCase, OpUnderTest
from posecascade.autodiff.tensor import Tensor
from posecascade.data.domain import HandPose
from posecascade.geometry.domain import CameraIntrinsics, CubeSpec, WorldPoint
from posecascade.model.domain import BackboneConfig, NetworkKind, PoseRenConfig, guide_schema
from posecascade.model.network import init_params, posren_forward


TINY_CAMERA = CameraIntrinsics(fx=100.0, fy=100.0, cx=40.0, cy=40.0)


def tiny_config(**overrides: object) -> PoseRenConfig:
    values: dict[str, object] = {
        "backbone": BackboneConfig(conv_channels=(4, 4, 8, 8, 16, 16), input_size=32),
        "schema": guide_schema("tiny"),
        "region_w": 3,
        "region_h": 3,
        "fc_region_dim": 32,
        "fc_finger_dim": 32,
        "flat_fc_dims": (32, 32),
        "init_fc_dim": 32,
        "dropout_rate": 0.0,
    }
    values.update(overrides)
    return PoseRenConfig.model_validate(values)


def tiny_guides(
    rng: np.random.Generator, batch: int, config: PoseRenConfig
) -> tuple[list[HandPose], list[CubeSpec]]:
    """Random guide poses scattered inside cubes placed in front of ``TINY_CAMERA``."""
    cubes: list[CubeSpec] = []
    guides: list[HandPose] = []
    for _ in range(batch):
        x, y = rng.uniform(-20, 20, size=2)
        center = WorldPoint(x=float(x), y=float(y), z=float(rng.uniform(250, 350)))
        cube = CubeSpec(center=center, size=150.0)
        joints = center.as_array() + rng.uniform(-70, 70, size=(config.joint_count, 3))
        cubes.append(cube)
        guides.append(HandPose(joints, schema="tiny"))
    return guides, cubes


def _end_to_end_case(config: PoseRenConfig) -> collections.abc.Callable[
    [np.random.Generator], tuple[OpUnderTest, list[Tensor]]
]:
    def build(rng: np.random.Generator) -> tuple[OpUnderTest, list[Tensor]]:
        batch = 2
        params = init_params(
            config, NetworkKind.pose_ren, int(rng.integers(0, 2**31)), dtype=np.float64
        )
        # Non-zero biases so every bias gradient is exercised.
        for name, tensor in params.items():
            if name.endswith(".b"):
                tensor.data[...] = rng.uniform(-0.1, 0.1, size=tensor.shape)
        names = list(params)
        size = config.backbone.input_size
        patch = Tensor(rng.uniform(-1, 1, size=(batch, 1, size, size)), dtype=np.float64)
        guides, cubes = tiny_guides(rng, batch, config)
        target = Tensor(rng.uniform(-1, 1, size=(batch, config.output_dim)), dtype=np.float64)

        def op(inputs: collections.abc.Sequence[Tensor]) -> Tensor:
            current = dict(zip(names, inputs, strict=True))
            pose, _ = posren_forward(patch, guides, cubes, TINY_CAMERA, current, config)
            # A wide junction keeps the loss smooth around the random targets.
            return ops.smooth_l1_loss(pose, target, beta=10.0)

        return op, list(params.values())

    return build


def end_to_end_cases(max_elements: int | None = 4) -> dict[str, GradcheckCase]:
    """Structured and flat Pose-REN, every parameter tensor perturbed.

    Each configuration compares ``max_elements`` randomly drawn elements of every tensor (all of
    them for tensors that small, or with ``None``). Positions and parameters are drawn again for
    every configuration.
    """
    structured = tiny_config()
    flat = tiny_config(flat_ensemble=True)
    cases = [
        GradcheckCase("pose_ren_tiny", _end_to_end_case(structured), max_elements, eps=1e-5),
        GradcheckCase("pose_ren_tiny_flat", _end_to_end_case(flat), max_elements, eps=1e-5),
    ]
    return {case.name: case for case in cases}

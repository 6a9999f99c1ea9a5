"""Desk-scale synthetic hands: a 21-joint skeleton posed by forward kinematics and rendered into
depth frames as z-buffered spheres.

Hand frame: the palm joint at the origin, fingers pointing along -y in the palm plane (x, y) at
rest, flexion curling each finger toward +z. The global rotation (roll about the optical axis,
then bounded yaw and pitch) and translation place the hand in camera space.
"""

import logging
import math
import pathlib
import typing

import numpy as np
import numpy.typing as npt
import pydantic
from scipy.spatial.transform import Rotation

from posecascade.data.domain import (
    FINGER_JOINTS,
    FINGERS,
    DatasetError,
    DatasetErrorCode,
    DepthFrame,
    HandPose,
    finger_joint_index,
)
from posecascade.data.storage import LabeledDataset, save_dataset
from posecascade.geometry.domain import CameraIntrinsics
from posecascade.utils import parallel_map


logger = logging.getLogger(__name__)


def _proper(interval: tuple[float, float]) -> tuple[float, float]:
    if interval[0] > interval[1]:
        raise ValueError(f"interval {interval} has low > high")
    return interval


Interval = typing.Annotated[tuple[float, float], pydantic.AfterValidator(_proper)]


class SyntheticHandSpec(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True)

    frame_width: int = pydantic.Field(default=128, ge=8)
    frame_height: int = pydantic.Field(default=128, ge=8)

    root_offset_mm: float = pydantic.Field(default=25.0, gt=0.0)
    """Distance from the palm joint to every finger root."""
    spread_deg: tuple[float, float, float, float, float] = (-70.0, -22.0, 0.0, 20.0, 40.0)
    """Rest direction of each finger in the palm plane, measured from -y toward +x."""
    bone_lengths_mm: tuple[
        tuple[float, float, float], ...
    ] = (
        (18.0, 14.0, 12.0),
        (20.0, 13.0, 11.0),
        (22.0, 14.0, 11.0),
        (20.0, 13.0, 11.0),
        (16.0, 11.0, 9.0),
    )
    """Root→PIP, PIP→DIP and DIP→tip lengths per finger."""

    flexion_rad: Interval = (0.0, 1.2)
    abduction_rad: Interval = (-0.25, 0.25)
    roll_deg: Interval = (-45.0, 45.0)
    yaw_deg: Interval = (-30.0, 30.0)
    pitch_deg: Interval = (-30.0, 30.0)

    translation_x_mm: Interval = (-40.0, 40.0)
    translation_y_mm: Interval = (-40.0, 40.0)
    translation_z_mm: Interval = (400.0, 600.0)

    palm_radius_mm: float = pydantic.Field(default=16.0, gt=0.0)
    joint_radius_mm: float = pydantic.Field(default=7.0, gt=0.0)
    bone_radius_mm: float = pydantic.Field(default=6.0, gt=0.0)
    noise_sigma_mm: float = pydantic.Field(default=0.0, ge=0.0)

    @pydantic.field_validator("bone_lengths_mm")
    @classmethod
    def _positive_bones(cls, value: tuple[tuple[float, float, float], ...]):
        if len(value) != len(FINGERS) or any(length <= 0 for bones in value for length in bones):
            raise ValueError("expected 5 fingers with 3 positive bone lengths each")
        return value

    @property
    def joint_count(self) -> int:
        return 1 + len(FINGERS) * len(FINGER_JOINTS)

    @property
    def max_reach_mm(self) -> float:
        """Radius around the palm joint that contains every rendered sphere."""
        longest = max(sum(bones) for bones in self.bone_lengths_mm)
        finger_radius = max(self.joint_radius_mm, self.bone_radius_mm)
        return max(self.root_offset_mm + longest + finger_radius, self.palm_radius_mm)


####################################################################################################
###   FORWARD KINEMATICS   #########################################################################
####################################################################################################


def pose_hand(
    spec: SyntheticHandSpec,
    flexion: npt.NDArray[np.float64],
    abduction: npt.NDArray[np.float64],
    rotation: Rotation,
    translation: npt.NDArray[np.float64],
) -> npt.NDArray[np.float64]:
    """(21, 3) camera-space joints for per-finger ``flexion`` (5, 3) and ``abduction`` (5,)."""
    joints = np.zeros((spec.joint_count, 3))
    z_axis = np.array([0.0, 0.0, 1.0])
    for finger, spread in enumerate(spec.spread_deg):
        rest = math.radians(spread)
        root = spec.root_offset_mm * np.array([math.sin(rest), -math.cos(rest), 0.0])
        # Abduction turns the finger about the palm normal.
        direction = Rotation.from_rotvec(z_axis * abduction[finger]).apply(
            np.array([math.sin(rest), -math.cos(rest), 0.0])
        )
        joints[finger_joint_index(finger, 0)] = root
        position, curl = root, 0.0
        for bone, length in enumerate(spec.bone_lengths_mm[finger]):
            curl += flexion[finger, bone]
            position = position + length * (math.cos(curl) * direction + math.sin(curl) * z_axis)
            joints[finger_joint_index(finger, bone + 1)] = position
    return rotation.apply(joints) + translation


def hand_bones() -> list[tuple[int, int]]:
    """(parent, child) joint pairs: palm → root, then along each finger."""
    bones: list[tuple[int, int]] = []
    for finger in range(len(FINGERS)):
        bones.append((0, finger_joint_index(finger, 0)))
        for joint in range(1, len(FINGER_JOINTS)):
            bones.append((finger_joint_index(finger, joint - 1), finger_joint_index(finger, joint)))
    return bones


def _translation_box(
    spec: SyntheticHandSpec, cam: CameraIntrinsics
) -> tuple[Interval, Interval, Interval]:
    """Translation ranges shrunk so that every sphere projects inside the frame."""
    reach = spec.max_reach_mm
    z_low, z_high = spec.translation_z_mm
    if z_low - reach <= 0:
        raise DatasetError(DatasetErrorCode.invalid_spec, f"z {z_low} mm within reach {reach} mm")
    # Worst case: the nearest hand at the frame border.
    margin_u = min(cam.cx, spec.frame_width - 1 - cam.cx)
    margin_v = min(cam.cy, spec.frame_height - 1 - cam.cy)
    limit_x = margin_u * (z_low - reach) / cam.fx - reach
    limit_y = margin_v * (z_low - reach) / cam.fy - reach
    if limit_x < 0 or limit_y < 0:
        raise DatasetError(
            DatasetErrorCode.invalid_spec, f"hand reach {reach} mm does not fit at z = {z_low} mm"
        )
    box_x = (max(spec.translation_x_mm[0], -limit_x), min(spec.translation_x_mm[1], limit_x))
    box_y = (max(spec.translation_y_mm[0], -limit_y), min(spec.translation_y_mm[1], limit_y))
    if box_x[0] > box_x[1] or box_y[0] > box_y[1]:
        raise DatasetError(
            DatasetErrorCode.invalid_spec,
            f"translation box empty after clamping ({box_x}, {box_y})",
        )
    if box_x != spec.translation_x_mm or box_y != spec.translation_y_mm:
        logger.warning(f"Translation box clamped to x {box_x}, y {box_y} to keep hands in frame")
    return box_x, box_y, (z_low, z_high)


####################################################################################################
###   RENDERING   ##################################################################################
####################################################################################################


def hand_spheres(
    spec: SyntheticHandSpec, joints: npt.NDArray[np.float64]
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Sphere centers (K, 3) and radii (K,): one per joint plus capsules along every bone."""
    centers = [joints]
    radii = [np.full(len(joints), spec.joint_radius_mm)]
    radii[0][0] = spec.palm_radius_mm
    for parent, child in hand_bones():
        length = float(np.linalg.norm(joints[child] - joints[parent]))
        steps = max(2, math.ceil(length / (spec.bone_radius_mm / 2.0)) + 1)
        t = np.linspace(0.0, 1.0, steps)[1:-1, None]
        centers.append(joints[parent] + t * (joints[child] - joints[parent]))
        radii.append(np.full(len(t), spec.bone_radius_mm))
    return np.concatenate(centers), np.concatenate(radii)


def render_depth(
    centers: npt.NDArray[np.float64],
    radii: npt.NDArray[np.float64],
    cam: CameraIntrinsics,
    width: int,
    height: int,
) -> npt.NDArray[np.float64]:
    """Z-buffer of the nearest ray–sphere intersection per pixel; 0 where no sphere is hit."""
    zbuffer = np.full((height, width), np.inf)
    for center, radius in zip(centers, radii, strict=True):
        # Projection of the sphere's bounding box corners.
        depths = np.array([center[2] - radius, center[2] + radius])
        us = cam.fx * np.outer([center[0] - radius, center[0] + radius], 1.0 / depths) + cam.cx
        vs = cam.fy * np.outer([center[1] - radius, center[1] + radius], 1.0 / depths) + cam.cy
        u_low, u_high = math.floor(us.min()) - 1, math.ceil(us.max()) + 1
        v_low, v_high = math.floor(vs.min()) - 1, math.ceil(vs.max()) + 1
        u_low, v_low = max(u_low, 0), max(v_low, 0)
        u_high, v_high = min(u_high, width - 1), min(v_high, height - 1)
        if u_low > u_high or v_low > v_high:
            continue
        u, v = np.meshgrid(np.arange(u_low, u_high + 1), np.arange(v_low, v_high + 1))
        # Ray through the pixel: z · ((u - cx)/fx, (v - cy)/fy, 1).
        ray = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones(u.shape)], axis=-1)
        a = np.sum(ray * ray, axis=-1)
        b = ray @ center
        c = float(center @ center) - radius * radius
        disc = b * b - a * c
        hit = disc >= 0
        z = np.where(hit, (b - np.sqrt(np.maximum(disc, 0.0))) / a, np.inf)
        block = zbuffer[v_low : v_high + 1, u_low : u_high + 1]
        np.minimum(block, z, out=block)
    zbuffer[np.isinf(zbuffer)] = 0.0
    return zbuffer


def render_frame(
    spec: SyntheticHandSpec,
    cam: CameraIntrinsics,
    joints: npt.NDArray[np.float64],
    rng: np.random.Generator | None = None,
) -> DepthFrame:
    centers, radii = hand_spheres(spec, joints)
    depth = render_depth(centers, radii, cam, spec.frame_width, spec.frame_height)
    hand = depth > 0
    if rng is not None and spec.noise_sigma_mm > 0:
        depth[hand] += rng.normal(0.0, spec.noise_sigma_mm, size=int(hand.sum()))
    depth = np.where(hand, np.clip(np.round(depth), 1, np.iinfo(np.uint16).max), 0)
    return DepthFrame(spec.frame_width, spec.frame_height, depth.astype(np.uint16))


####################################################################################################
###   SAMPLING   ###################################################################################
####################################################################################################


def sample_hand(
    spec: SyntheticHandSpec,
    cam: CameraIntrinsics,
    rng: np.random.Generator,
    box: tuple[Interval, Interval, Interval] | None = None,
) -> tuple[DepthFrame, HandPose]:
    box_x, box_y, box_z = box or _translation_box(spec, cam)
    fingers = len(FINGERS)
    flexion = rng.uniform(*spec.flexion_rad, size=(fingers, 3))
    abduction = rng.uniform(*spec.abduction_rad, size=fingers)
    angles = [rng.uniform(*spec.roll_deg), rng.uniform(*spec.yaw_deg), rng.uniform(*spec.pitch_deg)]
    rotation = Rotation.from_euler("ZYX", angles, degrees=True)
    translation = np.array([rng.uniform(*box_x), rng.uniform(*box_y), rng.uniform(*box_z)])

    # Stored poses are f32, so the in-memory ones are rounded the same way.
    joints = pose_hand(spec, flexion, abduction, rotation, translation)
    joints = joints.astype(np.float32).astype(np.float64)
    frame = render_frame(spec, cam, joints, rng)
    return frame, HandPose(joints)


def synthesize(
    spec: SyntheticHandSpec, cam: CameraIntrinsics, count: int, seed: int
) -> LabeledDataset:
    """``count`` frames; frame ``i`` depends only on ``(spec, cam, seed, i)``."""
    if count < 1:
        raise DatasetError(DatasetErrorCode.empty_dataset, f"count = {count}")
    box = _translation_box(spec, cam)
    children = np.random.SeedSequence(seed).spawn(count)
    samples = parallel_map(
        lambda child: sample_hand(spec, cam, np.random.default_rng(child), box), children
    )
    return LabeledDataset(cam, [frame for frame, _ in samples], [pose for _, pose in samples])


def generate_synthetic_dataset(
    spec: SyntheticHandSpec,
    cam: CameraIntrinsics,
    count: int,
    seed: int,
    directory: pathlib.Path,
) -> pathlib.Path:
    """Render ``count`` frames and write them under ``directory``. Returns the manifest path."""
    dataset = synthesize(spec, cam, count, seed)
    return save_dataset(dataset, directory)

"""Camera projection, hand-cube extraction/normalization and guide-joint → feature-window mapping.

Pixel convention: pixel ``(row v, column u)`` of a depth frame has its center at image coordinate
``(u, v)``. A patch of ``S``×``S`` cells resamples the projected cube box ``[u0, u1]×[v0, v1]``;
patch cell ``j`` covers box coordinates ``[j, j+1)`` once scaled by ``S / (u1 - u0)``.
"""

import enum
import math
import typing

import numpy as np
import numpy.typing as npt
import pydantic

from posecascade.autodiff.tensor import Tensor
from posecascade.data.domain import DepthFrame, HandPose
from posecascade.utils import CodedError


class GeometryErrorCode(str, enum.Enum):
    non_positive_depth = "Point depth must be positive"
    empty_region = "No pixel lies inside the valid depth range"
    degenerate_box = "Projected cube box is smaller than one pixel"
    window_too_large = "Region window does not fit in the feature map"


class GeometryError(CodedError):
    pass


class CameraIntrinsics(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True)

    fx: float = pydantic.Field(gt=0.0)
    fy: float = pydantic.Field(gt=0.0)
    cx: float
    cy: float


class WorldPoint(pydantic.BaseModel):
    """Camera-space point in millimeters."""

    model_config = pydantic.ConfigDict(frozen=True)

    x: float
    y: float
    z: float

    def as_array(self) -> npt.NDArray[np.float64]:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


class PixelPoint(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True)

    u: float
    v: float
    d: float
    """Depth in millimeters."""


class CubeSpec(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True)

    center: WorldPoint
    size: float = pydantic.Field(default=150.0, gt=0.0)
    """Edge length in millimeters."""

    @property
    def half(self) -> float:
        return self.size / 2.0


class RegionWindow(pydantic.BaseModel):
    """Crop rectangle on a feature map, in feature-map cells."""

    model_config = pydantic.ConfigDict(frozen=True)

    b_u: int = pydantic.Field(ge=0)
    b_v: int = pydantic.Field(ge=0)
    w: int = pydantic.Field(ge=1)
    h: int = pydantic.Field(ge=1)


####################################################################################################
###   PROJECTION   #################################################################################
####################################################################################################


def project_points(xyz: npt.ArrayLike, cam: CameraIntrinsics) -> npt.NDArray[np.float64]:
    """(..., 3) world points → (..., 3) ``(u, v, d)``."""
    points = np.asarray(xyz, dtype=np.float64)
    z = points[..., 2]
    if np.any(z <= 0):
        raise GeometryError(GeometryErrorCode.non_positive_depth, f"min z = {float(z.min())}")
    u = cam.fx * points[..., 0] / z + cam.cx
    v = cam.fy * points[..., 1] / z + cam.cy
    return np.stack([u, v, z], axis=-1)


def unproject_points(uvd: npt.ArrayLike, cam: CameraIntrinsics) -> npt.NDArray[np.float64]:
    """(..., 3) ``(u, v, d)`` → (..., 3) world points."""
    pixels = np.asarray(uvd, dtype=np.float64)
    d = pixels[..., 2]
    if np.any(d <= 0):
        raise GeometryError(GeometryErrorCode.non_positive_depth, f"min d = {float(d.min())}")
    x = (pixels[..., 0] - cam.cx) * d / cam.fx
    y = (pixels[..., 1] - cam.cy) * d / cam.fy
    return np.stack([x, y, d], axis=-1)


def project_world_to_pixel(p: WorldPoint, cam: CameraIntrinsics) -> PixelPoint:
    if p.z <= 0:
        raise GeometryError(GeometryErrorCode.non_positive_depth, f"z = {p.z}")
    return PixelPoint(u=cam.fx * p.x / p.z + cam.cx, v=cam.fy * p.y / p.z + cam.cy, d=p.z)


def project_pixel_to_world(p: PixelPoint, cam: CameraIntrinsics) -> WorldPoint:
    if p.d <= 0:
        raise GeometryError(GeometryErrorCode.non_positive_depth, f"d = {p.d}")
    return WorldPoint(x=(p.u - cam.cx) * p.d / cam.fx, y=(p.v - cam.cy) * p.d / cam.fy, z=p.d)


####################################################################################################
###   HAND CUBE   ##################################################################################
####################################################################################################


def compute_hand_center(
    frame: DepthFrame, cam: CameraIntrinsics, valid_range: tuple[float, float] = (1.0, 2000.0)
) -> WorldPoint:
    """Mean of the back-projected pixels whose depth lies in ``[near, far]`` (the hand region)."""
    near, far = valid_range
    depth = frame.depth.astype(np.float64)
    inside = (depth > 0) & (depth >= near) & (depth <= far)
    if not np.any(inside):
        raise GeometryError(GeometryErrorCode.empty_region, f"range [{near}, {far}] mm")
    v, u = np.nonzero(inside)
    world = unproject_points(np.stack([u, v, depth[v, u]], axis=-1), cam)
    x, y, z = world.mean(axis=0)
    return WorldPoint(x=float(x), y=float(y), z=float(z))


def cube_box(cube: CubeSpec, cam: CameraIntrinsics) -> tuple[float, float, float, float]:
    """Image-space box ``(u0, v0, u1, v1)`` of the cube's front face projected at center depth."""
    c = cube.center
    if c.z <= 0:
        raise GeometryError(GeometryErrorCode.non_positive_depth, f"cube center z = {c.z}")
    half = cube.half
    u0 = cam.fx * (c.x - half) / c.z + cam.cx
    u1 = cam.fx * (c.x + half) / c.z + cam.cx
    v0 = cam.fy * (c.y - half) / c.z + cam.cy
    v1 = cam.fy * (c.y + half) / c.z + cam.cy
    return u0, v0, u1, v1


def extract_cube_patch(
    frame: DepthFrame, cube: CubeSpec, cam: CameraIntrinsics, out_size: int = 96
) -> Tensor:
    """Nearest-neighbor resampling of the cube box into an ``out_size``² patch with depth mapped to
    ``(d - center.z) / (size / 2)`` and truncated to [-1, 1]. Missing depth becomes +1."""
    if out_size < 2:
        raise GeometryError(GeometryErrorCode.degenerate_box, f"out_size = {out_size}")
    u0, v0, u1, v1 = cube_box(cube, cam)
    if u1 - u0 < 1.0 or v1 - v0 < 1.0:
        raise GeometryError(GeometryErrorCode.degenerate_box, f"box ({u0}, {v0}, {u1}, {v1})")

    cells = np.arange(out_size) + 0.5
    cols = np.floor(u0 + cells * (u1 - u0) / out_size + 0.5).astype(np.int64)
    rows = np.floor(v0 + cells * (v1 - v0) / out_size + 0.5).astype(np.int64)
    col_ok = (cols >= 0) & (cols < frame.width)
    row_ok = (rows >= 0) & (rows < frame.height)
    sampled = frame.depth[np.clip(rows, 0, frame.height - 1)[:, None],
                          np.clip(cols, 0, frame.width - 1)[None, :]].astype(np.float64)
    sampled[~(row_ok[:, None] & col_ok[None, :])] = 0.0

    patch = (sampled - cube.center.z) / cube.half
    patch[sampled == 0] = 1.0
    patch = np.clip(patch, -1.0, 1.0)
    return Tensor(patch[None, None])


def world_to_patch(
    xyz: npt.ArrayLike, cube: CubeSpec, cam: CameraIntrinsics, patch_size: int
) -> npt.NDArray[np.float64]:
    """(..., 3) world points → (..., 3) ``(patch u, patch v, depth mm)``."""
    uvd = project_points(xyz, cam)
    u0, v0, u1, v1 = cube_box(cube, cam)
    pu = (uvd[..., 0] - u0) * patch_size / (u1 - u0)
    pv = (uvd[..., 1] - v0) * patch_size / (v1 - v0)
    return np.stack([pu, pv, uvd[..., 2]], axis=-1)


def patch_to_world(
    puvd: npt.ArrayLike, cube: CubeSpec, cam: CameraIntrinsics, patch_size: int
) -> npt.NDArray[np.float64]:
    """Inverse of ``world_to_patch``."""
    points = np.asarray(puvd, dtype=np.float64)
    u0, v0, u1, v1 = cube_box(cube, cam)
    u = u0 + points[..., 0] * (u1 - u0) / patch_size
    v = v0 + points[..., 1] * (v1 - v0) / patch_size
    return unproject_points(np.stack([u, v, points[..., 2]], axis=-1), cam)


####################################################################################################
###   POSE NORMALIZATION   #########################################################################
####################################################################################################


def pose_world_to_normalized(pose: HandPose, cube: CubeSpec) -> npt.NDArray[np.float64]:
    """Flattened (3J,) pose with every coordinate mapped to ``(coord - center) / (size / 2)``.

    Values outside [-1, 1] are kept so the mapping stays invertible.
    """
    center = cube.center.as_array()
    return ((pose.joints - center) / cube.half).reshape(-1)


def pose_normalized_to_world(
    normalized: npt.ArrayLike, cube: CubeSpec, schema: str = "hand21"
) -> HandPose:
    values = np.asarray(normalized, dtype=np.float64).reshape(-1, 3)
    return HandPose(values * cube.half + cube.center.as_array(), schema=schema)


####################################################################################################
###   REGION WINDOWS   #############################################################################
####################################################################################################


def compute_region_windows(
    joints: npt.ArrayLike,
    cube: CubeSpec,
    cam: CameraIntrinsics,
    patch_size: int,
    feat_size: int,
    w: int,
    h: int,
) -> list[RegionWindow]:
    """One feature-map window per row of ``joints`` ((M, 3) world points).

    The joint is projected into patch coordinates, scaled by ``feat_size / patch_size``, the window
    is centered at the half-up rounded cell and finally clamped so it lies fully inside the map.
    """
    if w > feat_size or h > feat_size:
        raise GeometryError(GeometryErrorCode.window_too_large, f"{w}×{h} on {feat_size}")
    puvd = world_to_patch(joints, cube, cam, patch_size).reshape(-1, 3)
    scale = feat_size / patch_size
    # Far-away joints may project to huge coordinates; the clamp below handles them.
    centers_u = np.clip(np.floor(puvd[:, 0] * scale + 0.5), -1e6, 1e6)
    centers_v = np.clip(np.floor(puvd[:, 1] * scale + 0.5), -1e6, 1e6)
    b_u = np.clip(centers_u.astype(np.int64) - w // 2, 0, feat_size - w)
    b_v = np.clip(centers_v.astype(np.int64) - h // 2, 0, feat_size - h)
    return [
        RegionWindow(b_u=int(bu), b_v=int(bv), w=w, h=h)
        for bu, bv in zip(b_u, b_v, strict=True)
    ]


def compute_region_window(
    joint: WorldPoint,
    cube: CubeSpec,
    cam: CameraIntrinsics,
    patch_size: int,
    feat_size: int,
    w: int = 7,
    h: int = 7,
) -> RegionWindow:
    return compute_region_windows(
        joint.as_array()[None], cube, cam, patch_size, feat_size, w, h
    )[0]


def grid_region_windows(count: int, feat_size: int, w: int, h: int) -> list[RegionWindow]:
    """``count`` windows on a uniform ⌈√count⌉² lattice (row-major, first ``count`` cells), corners
    evenly spaced from 0 to ``feat_size - w``. The pose-independent baseline layout."""
    if w > feat_size or h > feat_size:
        raise GeometryError(GeometryErrorCode.window_too_large, f"{w}×{h} on {feat_size}")
    side = math.ceil(math.sqrt(count))

    def corners(extent: int) -> list[int]:
        if side == 1:
            return [(feat_size - extent) // 2]
        return [math.floor(k * (feat_size - extent) / (side - 1) + 0.5) for k in range(side)]

    cells: list[RegionWindow] = []
    for b_v in corners(h):
        for b_u in corners(w):
            cells.append(RegionWindow(b_u=b_u, b_v=b_v, w=w, h=h))
    return cells[:count]


__all__: typing.Sequence[str] = [
    "CameraIntrinsics",
    "CubeSpec",
    "GeometryError",
    "GeometryErrorCode",
    "PixelPoint",
    "RegionWindow",
    "WorldPoint",
    "compute_hand_center",
    "compute_region_window",
    "compute_region_windows",
    "cube_box",
    "extract_cube_patch",
    "grid_region_windows",
    "patch_to_world",
    "pose_normalized_to_world",
    "pose_world_to_normalized",
    "project_pixel_to_world",
    "project_points",
    "project_world_to_pixel",
    "unproject_points",
    "world_to_patch",
]

"""PRDF frame files and the text manifest that lists them.

Frame file, all integers little-endian::

    b"PRDF" | u32 version | u32 width | u32 height | u32 J | width·height u16 depth (mm) | 3·J f32

Manifest: a header line ``fx fy cx cy`` followed by one frame path per line, relative to the
manifest's directory.
"""

import dataclasses
import logging
import pathlib
import struct

import numpy as np

from posecascade.data.domain import DatasetError, DatasetErrorCode, DepthFrame, HandPose
from posecascade.geometry.domain import CameraIntrinsics
from posecascade.utils import parallel_map


logger = logging.getLogger(__name__)

FRAME_MAGIC = b"PRDF"
FRAME_VERSION = 1
MANIFEST_NAME = "manifest.txt"

_HEADER = struct.Struct("<4sIIII")


@dataclasses.dataclass
class LabeledDataset:
    """Depth frames with their ground-truth poses, aligned by position, and the camera."""

    camera: CameraIntrinsics
    frames: list[DepthFrame]
    poses: list[HandPose]

    def __post_init__(self) -> None:
        if len(self.frames) != len(self.poses):
            raise DatasetError(
                DatasetErrorCode.bad_manifest,
                f"{len(self.frames)} frames but {len(self.poses)} poses",
            )

    def __len__(self) -> int:
        return len(self.frames)

    def subset(self, indices: "list[int] | range") -> "LabeledDataset":
        return LabeledDataset(
            self.camera, [self.frames[i] for i in indices], [self.poses[i] for i in indices]
        )


def encode_frame(frame: DepthFrame, pose: HandPose) -> bytes:
    header = _HEADER.pack(FRAME_MAGIC, FRAME_VERSION, frame.width, frame.height, pose.joint_count)
    depth = frame.depth.astype("<u2", copy=False).tobytes()
    joints = pose.joints.astype("<f4").tobytes()
    return header + depth + joints


def decode_frame(content: bytes, source: str = "<bytes>") -> tuple[DepthFrame, HandPose]:
    if len(content) < _HEADER.size or content[:4] != FRAME_MAGIC:
        raise DatasetError(DatasetErrorCode.bad_magic, source)
    _, version, width, height, joint_count = _HEADER.unpack_from(content)
    if version != FRAME_VERSION:
        raise DatasetError(DatasetErrorCode.bad_magic, f"{source}: unsupported version {version}")
    depth_bytes = 2 * width * height
    expected = _HEADER.size + depth_bytes + 12 * joint_count
    if len(content) != expected:
        raise DatasetError(
            DatasetErrorCode.size_mismatch,
            f"{source}: {len(content)} bytes, header says {expected}",
        )
    depth = np.frombuffer(content, dtype="<u2", count=width * height, offset=_HEADER.size)
    joints = np.frombuffer(
        content, dtype="<f4", count=3 * joint_count, offset=_HEADER.size + depth_bytes
    )
    frame = DepthFrame(width, height, depth.reshape(height, width).astype(np.uint16))
    return frame, HandPose(joints.reshape(joint_count, 3).astype(np.float64))


def save_frame(path: pathlib.Path, frame: DepthFrame, pose: HandPose) -> None:
    path.write_bytes(encode_frame(frame, pose))


def load_frame(path: pathlib.Path) -> tuple[DepthFrame, HandPose]:
    if not path.is_file():
        raise DatasetError(DatasetErrorCode.missing_file, str(path))
    return decode_frame(path.read_bytes(), str(path))


def save_dataset(dataset: LabeledDataset, directory: pathlib.Path) -> pathlib.Path:
    """Write every frame plus the manifest under ``directory``; returns the manifest path."""
    if len(dataset) == 0:
        raise DatasetError(DatasetErrorCode.empty_dataset)
    frames_dir = directory / "frames"
    names = [f"frames/frame_{index:06d}.prdf" for index in range(len(dataset))]
    try:
        frames_dir.mkdir(parents=True, exist_ok=True)
        parallel_map(
            lambda item: save_frame(directory / item[0], item[1], item[2]),
            zip(names, dataset.frames, dataset.poses),
        )
        cam = dataset.camera
        lines = [f"{cam.fx!r} {cam.fy!r} {cam.cx!r} {cam.cy!r}", *names]
        manifest = directory / MANIFEST_NAME
        manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(DatasetErrorCode.unwritable_path, f"{directory}: {exc}") from exc
    logger.info(f"Wrote {len(dataset)} frames to {directory}")
    return manifest


def read_manifest(manifest: pathlib.Path) -> tuple[CameraIntrinsics, list[pathlib.Path]]:
    if not manifest.is_file():
        raise DatasetError(DatasetErrorCode.missing_file, str(manifest))
    lines = [line.strip() for line in manifest.read_text(encoding="utf-8").splitlines()]
    lines = [line for line in lines if line]
    if not lines:
        raise DatasetError(DatasetErrorCode.bad_manifest, f"{manifest} is empty")
    fields = lines[0].split()
    try:
        fx, fy, cx, cy = (float(field) for field in fields)
        camera = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy)
    except ValueError as exc:
        raise DatasetError(
            DatasetErrorCode.bad_manifest, f"{manifest}: header {lines[0]!r}"
        ) from exc
    return camera, [manifest.parent / line for line in lines[1:]]


def load_dataset(manifest: pathlib.Path) -> LabeledDataset:
    camera, paths = read_manifest(manifest)
    if not paths:
        raise DatasetError(DatasetErrorCode.empty_dataset, str(manifest))
    for path in paths:
        if not path.is_file():
            raise DatasetError(DatasetErrorCode.missing_file, str(path))
    loaded = parallel_map(load_frame, paths)
    logger.info(f"Loaded {len(loaded)} frames from {manifest}")
    return LabeledDataset(camera, [frame for frame, _ in loaded], [pose for _, pose in loaded])

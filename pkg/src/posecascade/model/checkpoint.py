"""Binary checkpoints of a parameter set.

Layout, all integers little-endian u32::

    b"PREN" | version | tensor count
    per tensor: name length | UTF-8 name | rank | dims... | f32 data
    config length | UTF-8 JSON config echo

The JSON echo holds the network kind, the ``PoseRenConfig`` and an optional provenance hash.
"""

import dataclasses
import enum
import json
import logging
import pathlib
import struct
import typing

import numpy as np

from posecascade.autodiff.tensor import Tensor
from posecascade.model.domain import NetworkKind, ParamSet, PoseRenConfig
from posecascade.model.network import check_params
from posecascade.utils import CodedError


logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PREN"
CHECKPOINT_VERSION = 1

_U32 = struct.Struct("<I")


class CheckpointErrorCode(str, enum.Enum):
    bad_magic = "File is not a checkpoint (bad magic bytes)"
    truncated = "Checkpoint file is truncated"
    version_mismatch = "Unsupported checkpoint version"
    trailing_data = "Checkpoint file has unexpected trailing bytes"
    bad_config = "Checkpoint config echo cannot be parsed"


class CheckpointError(CodedError):
    pass


@dataclasses.dataclass
class Checkpoint:
    params: ParamSet
    config: PoseRenConfig
    network: NetworkKind
    version: int = CHECKPOINT_VERSION
    config_hash: str | None = None


def encode_checkpoint(
    params: ParamSet,
    config: PoseRenConfig,
    network: NetworkKind,
    config_hash: str | None = None,
) -> bytes:
    chunks = [CHECKPOINT_MAGIC, _U32.pack(CHECKPOINT_VERSION), _U32.pack(len(params))]
    for name, tensor in params.items():
        encoded = name.encode("utf-8")
        chunks += [_U32.pack(len(encoded)), encoded, _U32.pack(len(tensor.shape))]
        chunks += [_U32.pack(extent) for extent in tensor.shape]
        chunks.append(tensor.data.astype("<f4").tobytes())
    echo: dict[str, typing.Any] = {"network": network.value, "config": config.to_json_dict()}
    if config_hash is not None:
        echo["config_hash"] = config_hash
    payload = json.dumps(echo, sort_keys=True).encode("utf-8")
    chunks += [_U32.pack(len(payload)), payload]
    return b"".join(chunks)


class _Reader:
    def __init__(self, content: bytes, source: str):
        self.content = content
        self.source = source
        self.offset = 0

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.content):
            raise CheckpointError(
                CheckpointErrorCode.truncated,
                f"{self.source}: need {end} bytes, file has {len(self.content)}",
            )
        chunk = self.content[self.offset : end]
        self.offset = end
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(_U32.size))[0]


def decode_checkpoint(content: bytes, source: str = "<bytes>") -> Checkpoint:
    """Parse a whole checkpoint; nothing is returned unless every byte is accounted for and the
    tensors match the layout of the echoed config and network."""
    reader = _Reader(content, source)
    if content[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(CheckpointErrorCode.bad_magic, source)
    reader.take(4)
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            CheckpointErrorCode.version_mismatch,
            f"{source}: version {version}, expected {CHECKPOINT_VERSION}",
        )
    params: ParamSet = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape)
        params[name] = Tensor(data, requires_grad=True, dtype=np.float32)
    payload = reader.take(reader.u32())
    if reader.offset != len(content):
        raise CheckpointError(
            CheckpointErrorCode.trailing_data, f"{source}: {len(content) - reader.offset} bytes"
        )
    try:
        echo = json.loads(payload.decode("utf-8"))
        config = PoseRenConfig.model_validate(echo["config"])
        network = NetworkKind(echo["network"])
    except (ValueError, KeyError) as exc:
        raise CheckpointError(CheckpointErrorCode.bad_config, f"{source}: {exc}") from exc
    check_params(params, config, network)
    return Checkpoint(params, config, network, version, echo.get("config_hash"))


def save_checkpoint(
    params: ParamSet,
    config: PoseRenConfig,
    path: pathlib.Path,
    network: NetworkKind = NetworkKind.pose_ren,
    config_hash: str | None = None,
) -> None:
    path.write_bytes(encode_checkpoint(params, config, network, config_hash))
    logger.info(f"Saved {network.value} checkpoint to {path}")


def load_checkpoint(path: pathlib.Path) -> Checkpoint:
    return decode_checkpoint(path.read_bytes(), str(path))

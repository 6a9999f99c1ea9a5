"""The run configuration: one flat ``key = value`` file for every command.

Lines are parsed with ``python-dotenv``, so ``#`` comments, blank lines and quoted values work.
Every key maps to a field of ``RunConfig``; unknown keys are rejected before anything runs. The
models of the other sub-packages are derived from it (``camera()``, ``network()``...).
"""

import collections.abc
import enum
import hashlib
import pathlib
import typing

import dotenv
import pydantic

from posecascade.cascade.domain import CascadeConfig
from posecascade.data.domain import AugmentationRanges
from posecascade.data.synthetic import SyntheticHandSpec
from posecascade.geometry.domain import CameraIntrinsics
from posecascade.model.domain import BackboneConfig, PoseRenConfig, SchemaPreset, guide_schema
from posecascade.utils import CodedError, CustomError


class ConfigErrorCode(str, enum.Enum):
    unknown_key = "Unknown configuration key"
    invalid_value = "Invalid configuration value"
    missing_file = "Configuration file not found"


class ConfigError(CodedError):
    pass


def _split_ints(value: typing.Any) -> typing.Any:
    if isinstance(value, str):
        return tuple(int(part) for part in value.replace(" ", "").split(",") if part)
    return value


IntList = typing.Annotated[tuple[int, ...], pydantic.BeforeValidator(_split_ints)]


class RunConfig(pydantic.BaseModel):
    """Every configurable of a run with its default. Values arrive as strings and are coerced."""

    model_config = pydantic.ConfigDict(extra="forbid", frozen=True)

    seed: int = pydantic.Field(default=0, ge=0)

    # Camera
    camera_fx: float = pydantic.Field(default=160.0, gt=0.0)
    camera_fy: float = pydantic.Field(default=160.0, gt=0.0)
    camera_cx: float = 64.0
    camera_cy: float = 64.0

    # Synthetic data
    synth_count: int = pydantic.Field(default=100, ge=1)
    frame_width: int = pydantic.Field(default=128, ge=8)
    frame_height: int = pydantic.Field(default=128, ge=8)
    noise_sigma_mm: float = pydantic.Field(default=0.0, ge=0.0)

    # Preprocessing
    cube_size_mm: float = pydantic.Field(default=150.0, gt=0.0)
    valid_depth_min_mm: float = pydantic.Field(default=1.0, ge=0.0)
    valid_depth_max_mm: float = pydantic.Field(default=2000.0, gt=0.0)

    # Network
    conv_channels: IntList = (16, 16, 32, 32, 64, 64)
    kernel_size: int = pydantic.Field(default=3, ge=1)
    pool_window: int = pydantic.Field(default=2, ge=1)
    input_size: int = pydantic.Field(default=96, ge=2)
    schema_preset: SchemaPreset = "default"
    region_w: int = pydantic.Field(default=7, ge=1)
    region_h: int = pydantic.Field(default=7, ge=1)
    fc_region_dim: int = pydantic.Field(default=2048, ge=1)
    fc_finger_dim: int = pydantic.Field(default=2048, ge=1)
    init_fc_dim: int = pydantic.Field(default=2048, ge=1)
    dropout_rate: float = pydantic.Field(default=0.5, ge=0.0, lt=1.0)
    flat_ensemble: bool = False
    flat_fc_dims: IntList = (2304, 2048)
    grid_regions: bool = False

    # Cascade
    train_stages: int = pydantic.Field(default=2, ge=1)
    infer_iterations: int = pydantic.Field(default=3, ge=0)
    epochs_per_stage: int = pydantic.Field(default=100, ge=0)
    init_epochs: int | None = pydantic.Field(default=None, ge=0)
    batch_size: int = pydantic.Field(default=128, ge=1)
    learning_rate: float = pydantic.Field(default=0.001, gt=0.0)
    lr_step_epochs: int = pydantic.Field(default=25, ge=1)
    lr_decay: float = pydantic.Field(default=0.1, gt=0.0, le=1.0)
    momentum: float = pydantic.Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = pydantic.Field(default=0.0005, ge=0.0)
    smooth_l1_beta: float = pydantic.Field(default=0.01, gt=0.0)
    augment: bool = True
    aug_scale_min: float = pydantic.Field(default=0.9, gt=0.0)
    aug_scale_max: float = pydantic.Field(default=1.1, gt=0.0)
    aug_translation_px: float = pydantic.Field(default=10.0, ge=0.0)
    aug_rotation_deg: float = pydantic.Field(default=180.0, ge=0.0, le=180.0)

    # Evaluation
    threshold_max_mm: float = pydantic.Field(default=80.0, ge=0.0)
    threshold_step_mm: float = pydantic.Field(default=1.0, gt=0.0)

    # Gradient check
    gradcheck_configs: int = pydantic.Field(default=10, ge=1)
    gradcheck_eps: float = pydantic.Field(default=1e-3, gt=0.0)
    gradcheck_tolerance: float = pydantic.Field(default=1e-3, gt=0.0)

    @pydantic.field_validator("flat_fc_dims")
    @classmethod
    def _two_dims(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if len(value) != 2:
            raise ValueError("flat_fc_dims needs exactly two widths")
        return value

    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics(
            fx=self.camera_fx, fy=self.camera_fy, cx=self.camera_cx, cy=self.camera_cy
        )

    def hand_spec(self) -> SyntheticHandSpec:
        return SyntheticHandSpec(
            frame_width=self.frame_width,
            frame_height=self.frame_height,
            noise_sigma_mm=self.noise_sigma_mm,
        )

    def network(self) -> PoseRenConfig:
        backbone = BackboneConfig(
            conv_channels=self.conv_channels,
            kernel_size=self.kernel_size,
            pool_window=self.pool_window,
            input_size=self.input_size,
        )
        return PoseRenConfig.model_validate(
            {
                "backbone": backbone,
                "schema": guide_schema(self.schema_preset),
                "region_w": self.region_w,
                "region_h": self.region_h,
                "fc_region_dim": self.fc_region_dim,
                "fc_finger_dim": self.fc_finger_dim,
                "dropout_rate": self.dropout_rate,
                "flat_ensemble": self.flat_ensemble,
                "flat_fc_dims": self.flat_fc_dims,
                "grid_regions": self.grid_regions,
                "init_fc_dim": self.init_fc_dim,
            }
        )

    def cascade(self) -> CascadeConfig:
        return CascadeConfig(
            train_stages=self.train_stages,
            infer_iterations=self.infer_iterations,
            epochs_per_stage=self.epochs_per_stage,
            init_epochs=self.init_epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            lr_step_epochs=self.lr_step_epochs,
            lr_decay=self.lr_decay,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            smooth_l1_beta=self.smooth_l1_beta,
            seed=self.seed,
            cube_size_mm=self.cube_size_mm,
            valid_depth_range=(self.valid_depth_min_mm, self.valid_depth_max_mm),
            augment=self.augment,
            augmentation=AugmentationRanges(
                scale_min=self.aug_scale_min,
                scale_max=self.aug_scale_max,
                translation_px=self.aug_translation_px,
                rotation_deg=self.aug_rotation_deg,
            ),
        )

    def thresholds(self) -> list[float]:
        count = int(round(self.threshold_max_mm / self.threshold_step_mm))
        return [i * self.threshold_step_mm for i in range(count + 1)]


def _render_value(value: typing.Any) -> str:
    if isinstance(value, tuple | list):
        items = typing.cast(collections.abc.Iterable[typing.Any], value)
        return ",".join(_render_value(item) for item in items)
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def render_config(config: RunConfig) -> str:
    """The fully resolved configuration as sorted ``key = value`` lines."""
    values = config.model_dump()
    return "".join(f"{key} = {_render_value(values[key])}\n" for key in sorted(values))


def config_hash(config: RunConfig) -> str:
    """First 16 hex digits of the SHA-256 of ``render_config``."""
    return hashlib.sha256(render_config(config).encode("utf-8")).hexdigest()[:16]


def parse_config(values: collections.abc.Mapping[str, str | None], source: str) -> RunConfig:
    fields = RunConfig.model_fields
    unknown = sorted(key for key in values if key not in fields)
    if unknown:
        raise ConfigError(ConfigErrorCode.unknown_key, f"{source}: {', '.join(unknown)}")
    # Empty values mean "use the default".
    given = {key: value for key, value in values.items() if value not in (None, "")}
    try:
        return RunConfig.model_validate(given)
    except pydantic.ValidationError as exc:
        raise ConfigError(ConfigErrorCode.invalid_value, f"{source}: {exc}") from exc


def load_run_config(path: pathlib.Path | None, seed: int | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``seed`` from the command line."""
    values: dict[str, str | None] = {}
    source = "<defaults>"
    if path is not None:
        if not path.is_file():
            raise ConfigError(ConfigErrorCode.missing_file, str(path))
        values = dict(dotenv.dotenv_values(path, encoding="utf-8"))
        source = str(path)
    if seed is not None:
        values["seed"] = str(seed)
    config = parse_config(values, source)
    try:
        # Cross-field checks of the derived models.
        config.network()
        config.cascade()
        config.hand_spec()
    except (pydantic.ValidationError, CustomError) as exc:
        raise ConfigError(ConfigErrorCode.invalid_value, f"{source}: {exc}") from exc
    return config

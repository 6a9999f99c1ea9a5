import dataclasses
import enum

import numpy as np
import pydantic

from posecascade.autodiff.tensor import Tensor
from posecascade.data.domain import AugmentationRanges, HandPose
from posecascade.data.meanpose import MeanPose
from posecascade.geometry.domain import CubeSpec
from posecascade.model.domain import ParamSet, PoseRenConfig
from posecascade.utils import CodedError


class CascadeErrorCode(str, enum.Enum):
    empty_dataset = "The training set is empty"
    joint_mismatch = "Pose joint count does not match the guide schema"
    invalid_iterations = "Iteration count must be non-negative"


class CascadeError(CodedError):
    pass


class CascadeConfig(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True)

    train_stages: int = pydantic.Field(default=2, ge=1)
    infer_iterations: int = pydantic.Field(default=3, ge=0)
    epochs_per_stage: int = pydantic.Field(default=100, ge=0)
    init_epochs: int | None = pydantic.Field(default=None, ge=0)
    """Init-CNN epochs; ``epochs_per_stage`` when unset."""
    batch_size: int = pydantic.Field(default=128, ge=1)
    learning_rate: float = pydantic.Field(default=0.001, gt=0.0)
    lr_step_epochs: int = pydantic.Field(default=25, ge=1)
    lr_decay: float = pydantic.Field(default=0.1, gt=0.0, le=1.0)
    momentum: float = pydantic.Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = pydantic.Field(default=0.0005, ge=0.0)
    smooth_l1_beta: float = pydantic.Field(default=0.01, gt=0.0)
    seed: int = pydantic.Field(default=0, ge=0)

    cube_size_mm: float = pydantic.Field(default=150.0, gt=0.0)
    valid_depth_range: tuple[float, float] = (1.0, 2000.0)
    augment: bool = True
    augmentation: AugmentationRanges = AugmentationRanges()

    @property
    def init_cnn_epochs(self) -> int:
        return self.epochs_per_stage if self.init_epochs is None else self.init_epochs

    def learning_rate_at(self, epoch: int) -> float:
        """Step schedule for 1-based ``epoch``: divided by 10 after every ``lr_step_epochs``."""
        return self.learning_rate * self.lr_decay ** ((epoch - 1) // self.lr_step_epochs)


@dataclasses.dataclass(frozen=True, eq=False)
class TrainingSample:
    frame_index: int
    patch: Tensor
    """1×1×S×S normalized cube patch, shared by every generation of the same frame."""
    input_pose: HandPose
    gt_pose: HandPose
    cube: CubeSpec
    generation: int = 0


@dataclasses.dataclass
class StageDataset:
    """The multiset of samples a stage trains on. Generation ``g`` holds the input poses produced
    by the ``g``-th refinement (generation 0: Init-CNN predictions)."""

    samples: list[TrainingSample]
    stage: int = 0

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def latest_generation(self) -> int:
        return max(sample.generation for sample in self.samples)

    @property
    def generation_size(self) -> int:
        """N_T: the number of samples in one generation."""
        return sum(1 for sample in self.samples if sample.generation == 0)


@dataclasses.dataclass(frozen=True)
class TrainingLogRow:
    network: str
    stage: int
    epoch: int
    lr: float
    loss: float


@dataclasses.dataclass(eq=False)
class TrainedCascade:
    """One Init-CNN plus the single Pose-REN model applied at every inference iteration."""

    init_params: ParamSet
    ren_params: ParamSet
    net_config: PoseRenConfig
    config: CascadeConfig
    mean_pose: MeanPose | None = None
    dataset_sizes: list[int] = dataclasses.field(default_factory=list)
    log: list[TrainingLogRow] = dataclasses.field(default_factory=list)


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1, dtype=np.uint64)[0])

import numpy as np
import pytest

from posecascade.cascade.domain import CascadeConfig
from posecascade.data.storage import LabeledDataset
from posecascade.data.synthetic import SyntheticHandSpec, synthesize
from posecascade.geometry.domain import CameraIntrinsics
from posecascade.model.domain import PoseRenConfig, guide_schema
from posecascade.model.verification import tiny_config


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def camera() -> CameraIntrinsics:
    """Matches the 128×128 synthetic frames."""
    return CameraIntrinsics(fx=160.0, fy=160.0, cx=64.0, cy=64.0)


@pytest.fixture(scope="session")
def hand_spec() -> SyntheticHandSpec:
    return SyntheticHandSpec()


@pytest.fixture(scope="session")
def small_net() -> PoseRenConfig:
    """21-joint Pose-REN with the tiny widths (32×32 patches, 4×4 feature maps)."""
    return tiny_config(schema=guide_schema("default"))


@pytest.fixture(scope="session")
def small_dataset(hand_spec: SyntheticHandSpec, camera: CameraIntrinsics) -> LabeledDataset:
    return synthesize(hand_spec, camera, count=6, seed=3)


@pytest.fixture
def quick_cascade() -> CascadeConfig:
    return CascadeConfig(
        train_stages=2,
        epochs_per_stage=1,
        batch_size=4,
        learning_rate=0.01,
        augment=False,
        seed=11,
    )

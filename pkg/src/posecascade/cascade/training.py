"""Stage-wise training of the cascade.

The Init-CNN is trained first and its predictions become the input poses of generation 0. Each
Pose-REN stage then trains on the current multiset of samples and refines the latest generation,
which is added to the multiset for the next stage. Later stages continue from the weights of the
previous one; the first Pose-REN stage starts from the Init-CNN backbone.
"""

import collections.abc
import logging

import numpy as np

from posecascade.autodiff.ops import smooth_l1_loss
from posecascade.autodiff.optim import OptimState, sgd_momentum_step
from posecascade.autodiff.tensor import Tape, Tensor, backprop
from posecascade.cascade.domain import (
    CascadeConfig,
    CascadeError,
    CascadeErrorCode,
    StageDataset,
    TrainedCascade,
    TrainingLogRow,
    TrainingSample,
    derive_seed,
)
from posecascade.cascade.inference import predict_init_poses, prepare_frames, refine_once
from posecascade.data.augmentation import augment_sample, draw_augmentation
from posecascade.data.meanpose import compute_mean_pose
from posecascade.data.storage import LabeledDataset
from posecascade.geometry.domain import CameraIntrinsics, pose_world_to_normalized
from posecascade.model.domain import NetworkKind, ParamSet, PoseRenConfig
from posecascade.model.network import (
    check_params,
    clone_params,
    copy_backbone,
    init_cnn_forward,
    init_params,
    posren_forward,
)
from posecascade.utils import parallel_map


logger = logging.getLogger(__name__)

INIT_STAGE = 0

# Keys mixed into the run seed so every random stream is independent.
_SEED_INIT_WEIGHTS = 1
_SEED_REN_WEIGHTS = 2
_SEED_SHUFFLE = 3
_SEED_AUGMENT = 4
_SEED_DROPOUT = 5


def _batch_arrays(
    samples: collections.abc.Sequence[TrainingSample],
    positions: collections.abc.Sequence[int],
    cam: CameraIntrinsics,
    config: CascadeConfig,
    stage: int,
    epoch: int,
) -> tuple[Tensor, list[TrainingSample]]:
    """Stacked patches and the (possibly augmented) samples of one batch.

    ``positions`` index ``samples``; the augmentation of a sample only depends on
    ``(seed, stage, epoch, position)``.
    """

    def augment(position: int) -> TrainingSample:
        sample = samples[position]
        if not config.augment:
            return sample
        rng = np.random.default_rng([config.seed, _SEED_AUGMENT, stage, epoch, position])
        params = draw_augmentation(config.augmentation, rng)
        patch, (input_pose, gt_pose) = augment_sample(
            sample.patch, [sample.input_pose, sample.gt_pose], sample.cube, cam, params
        )
        return TrainingSample(
            sample.frame_index, patch, input_pose, gt_pose, sample.cube, sample.generation
        )

    batch = parallel_map(augment, positions)
    patches = Tensor(np.concatenate([sample.patch.data for sample in batch]))
    return patches, batch


def _targets(batch: collections.abc.Sequence[TrainingSample]) -> Tensor:
    return Tensor(np.stack([pose_world_to_normalized(s.gt_pose, s.cube) for s in batch]))


def _forward(
    network: NetworkKind,
    patches: Tensor,
    batch: collections.abc.Sequence[TrainingSample],
    cam: CameraIntrinsics,
    params: ParamSet,
    net_config: PoseRenConfig,
    training: bool,
    seed: int,
) -> Tensor:
    if network == NetworkKind.init_cnn:
        return init_cnn_forward(patches, params, net_config, training, seed)
    guides = [sample.input_pose for sample in batch]
    cubes = [sample.cube for sample in batch]
    pose, _ = posren_forward(patches, guides, cubes, cam, params, net_config, training, seed)
    return pose


def _fit(
    network: NetworkKind,
    params: ParamSet,
    dataset: StageDataset,
    cam: CameraIntrinsics,
    net_config: PoseRenConfig,
    config: CascadeConfig,
    epochs: int,
    log: list[TrainingLogRow] | None,
) -> ParamSet:
    """SGD with momentum over ``epochs`` shuffled passes; partial last batches are kept."""
    samples = dataset.samples
    stage = dataset.stage if network == NetworkKind.pose_ren else INIT_STAGE
    param_list = list(params.values())
    state = OptimState.for_params(
        param_list, config.learning_rate, config.momentum, config.weight_decay
    )
    for epoch in range(1, epochs + 1):
        state.learning_rate = config.learning_rate_at(epoch)
        order = np.random.default_rng([config.seed, _SEED_SHUFFLE, stage, epoch]).permutation(
            len(samples)
        )
        total = 0.0
        for step, start in enumerate(range(0, len(samples), config.batch_size)):
            positions = [int(i) for i in order[start : start + config.batch_size]]
            patches, batch = _batch_arrays(samples, positions, cam, config, stage, epoch)
            dropout_seed = derive_seed(config.seed, _SEED_DROPOUT, stage, epoch, step)
            with Tape() as tape:
                pred = _forward(
                    network, patches, batch, cam, params, net_config, True, dropout_seed
                )
                loss = smooth_l1_loss(pred, _targets(batch), config.smooth_l1_beta)
            backprop(tape, loss)
            sgd_momentum_step(param_list, state)
            total += loss.item() * len(positions)
            logger.debug(f"{network.value} stage {stage} epoch {epoch} step {step}: {loss.item()}")
        mean_loss = total / len(samples)
        logger.info(
            f"{network.value} stage {stage} epoch {epoch}/{epochs}: "
            f"lr {state.learning_rate:.6g}, loss {mean_loss:.6f}"
        )
        if log is not None:
            log.append(TrainingLogRow(network.value, stage, epoch, state.learning_rate, mean_loss))
    return params


def _check_joints(dataset: StageDataset, net_config: PoseRenConfig) -> None:
    if not dataset.samples:
        raise CascadeError(CascadeErrorCode.empty_dataset)
    for sample in dataset.samples:
        for pose in (sample.input_pose, sample.gt_pose):
            if pose.joint_count != net_config.joint_count:
                raise CascadeError(
                    CascadeErrorCode.joint_mismatch,
                    f"frame {sample.frame_index}: {pose.joint_count} joints, "
                    f"schema has {net_config.joint_count}",
                )


def train_init_cnn(
    dataset: StageDataset,
    cam: CameraIntrinsics,
    net_config: PoseRenConfig,
    config: CascadeConfig,
    log: list[TrainingLogRow] | None = None,
) -> ParamSet:
    """Init-CNN from freshly initialized weights: patch → normalized ground-truth pose."""
    _check_joints(dataset, net_config)
    params = init_params(
        net_config, NetworkKind.init_cnn, derive_seed(config.seed, _SEED_INIT_WEIGHTS)
    )
    logger.info(f"Training Init-CNN on {len(dataset)} samples")
    return _fit(
        NetworkKind.init_cnn,
        params,
        dataset,
        cam,
        net_config,
        config,
        config.init_cnn_epochs,
        log,
    )


def train_stage(
    dataset: StageDataset,
    start_params: ParamSet,
    cam: CameraIntrinsics,
    net_config: PoseRenConfig,
    config: CascadeConfig,
    log: list[TrainingLogRow] | None = None,
) -> ParamSet:
    """Train Pose-REN on ``dataset`` (guide = input pose, target = ground truth), starting from a
    copy of ``start_params``."""
    _check_joints(dataset, net_config)
    check_params(start_params, net_config, NetworkKind.pose_ren)
    params = clone_params(start_params)
    logger.info(f"Training Pose-REN stage {dataset.stage} on {len(dataset)} samples")
    return _fit(
        NetworkKind.pose_ren,
        params,
        dataset,
        cam,
        net_config,
        config,
        config.epochs_per_stage,
        log,
    )


def augment_training_set(
    dataset: StageDataset,
    params: ParamSet,
    cam: CameraIntrinsics,
    net_config: PoseRenConfig,
    config: CascadeConfig,
) -> StageDataset:
    """Refine the latest generation once with ``params`` (unaugmented patches) and return the
    union of the existing samples with the refined ones."""
    generation = dataset.latest_generation
    latest = [sample for sample in dataset.samples if sample.generation == generation]
    refined = refine_once(
        [sample.patch for sample in latest],
        [sample.input_pose for sample in latest],
        [sample.cube for sample in latest],
        cam,
        params,
        net_config,
        config.batch_size,
    )
    added = [
        TrainingSample(s.frame_index, s.patch, pose, s.gt_pose, s.cube, generation + 1)
        for s, pose in zip(latest, refined, strict=True)
    ]
    logger.info(f"Training set grows from {len(dataset)} to {len(dataset) + len(added)} samples")
    return StageDataset(dataset.samples + added, dataset.stage + 1)


def base_dataset(
    data: LabeledDataset, net_config: PoseRenConfig, config: CascadeConfig
) -> StageDataset:
    """Samples with their cubes and patches; the ground truth stands in for the input pose until
    the Init-CNN predictions replace it."""
    if len(data) == 0:
        raise CascadeError(CascadeErrorCode.empty_dataset)
    prepared = prepare_frames(data.frames, data.camera, net_config.backbone.input_size, config)
    samples = [
        TrainingSample(index, item.patch, pose, pose, item.cube)
        for index, (item, pose) in enumerate(zip(prepared, data.poses, strict=True))
    ]
    return StageDataset(samples, stage=INIT_STAGE)


def initial_stage_dataset(
    base: StageDataset,
    init_cnn_params: ParamSet,
    net_config: PoseRenConfig,
    config: CascadeConfig,
) -> StageDataset:
    """Generation 0: the Init-CNN predictions as input poses."""
    samples = base.samples
    predicted = predict_init_poses(
        [s.patch for s in samples],
        [s.cube for s in samples],
        init_cnn_params,
        net_config,
        config.batch_size,
        samples[0].gt_pose.schema,
    )
    return StageDataset(
        [
            TrainingSample(s.frame_index, s.patch, pose, s.gt_pose, s.cube, 0)
            for s, pose in zip(samples, predicted, strict=True)
        ],
        stage=1,
    )


def train_cascade(
    data: LabeledDataset, net_config: PoseRenConfig, config: CascadeConfig
) -> TrainedCascade:
    log: list[TrainingLogRow] = []
    base = base_dataset(data, net_config, config)
    init = train_init_cnn(base, data.camera, net_config, config, log)
    mean_pose = compute_mean_pose(
        [s.gt_pose for s in base.samples], [s.cube for s in base.samples]
    )

    dataset = initial_stage_dataset(base, init, net_config, config)
    sizes = [len(dataset)]
    ren = init_params(net_config, NetworkKind.pose_ren, derive_seed(config.seed, _SEED_REN_WEIGHTS))
    copy_backbone(init, ren)
    for _ in range(config.train_stages):
        ren = train_stage(dataset, ren, data.camera, net_config, config, log)
        dataset = augment_training_set(dataset, ren, data.camera, net_config, config)
        sizes.append(len(dataset))
    return TrainedCascade(
        init_params=init,
        ren_params=ren,
        net_config=net_config,
        config=config,
        mean_pose=mean_pose,
        dataset_sizes=sizes,
        log=log,
    )

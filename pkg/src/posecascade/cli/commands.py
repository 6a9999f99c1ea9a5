"""One function per subcommand. Each returns the process exit code."""

import dataclasses
import logging
import pathlib

import numpy as np
import pandas as pd

from posecascade.autodiff.gradcheck import GradcheckRow, op_cases, run_gradcheck_suite
from posecascade.cascade.domain import TrainedCascade
from posecascade.cascade.inference import infer_batch
from posecascade.cascade.training import train_cascade
from posecascade.cli.config import (
    ConfigError,
    RunConfig,
    config_hash,
    load_run_config,
    render_config,
)
from posecascade.data.domain import HandPose
from posecascade.data.meanpose import MeanPose
from posecascade.data.storage import load_dataset
from posecascade.data.synthetic import generate_synthetic_dataset
from posecascade.eval.domain import per_stage_curves, per_stage_report
from posecascade.eval.export import (
    export_stage_reports,
    read_poses,
    read_predictions,
    stage_summary_frame,
    write_csv,
    write_poses,
    write_predictions,
)
from posecascade.model.checkpoint import (
    CheckpointError,
    CheckpointErrorCode,
    load_checkpoint,
    save_checkpoint,
)
from posecascade.model.domain import NetworkKind
from posecascade.model.verification import end_to_end_cases


logger = logging.getLogger(__name__)

INIT_CHECKPOINT = "init_cnn.pren"
REN_CHECKPOINT = "pose_ren.pren"
MEAN_POSE_FILE = "meanpose.csv"
TRAINING_LOG_FILE = "training_log.csv"
PREDICTIONS_FILE = "predictions.csv"
RUN_CONFIG_FILE = "run_config.conf"

# Must match between training and inference.
PREPROCESSING_KEYS = ("cube_size_mm", "valid_depth_min_mm", "valid_depth_max_mm")


def write_run_config(config: RunConfig, out: pathlib.Path) -> pathlib.Path:
    """Echo the fully resolved configuration next to the outputs of a command."""
    out.mkdir(parents=True, exist_ok=True)
    path = out / RUN_CONFIG_FILE
    path.write_text(render_config(config), encoding="utf-8")
    return path


def cmd_synth(config: RunConfig, out: pathlib.Path, count: int | None = None) -> int:
    count = config.synth_count if count is None else count
    manifest = generate_synthetic_dataset(
        config.hand_spec(), config.camera(), count, config.seed, out
    )
    print(f"✅ {count} frames written, manifest: {manifest}")
    return 0


def cmd_train(config: RunConfig, dataset: pathlib.Path, out: pathlib.Path) -> int:
    data = load_dataset(dataset)
    digest = config_hash(config)
    cascade = train_cascade(data, config.network(), config.cascade())

    write_run_config(config, out)
    save_checkpoint(
        cascade.init_params, cascade.net_config, out / INIT_CHECKPOINT, NetworkKind.init_cnn, digest
    )
    save_checkpoint(
        cascade.ren_params, cascade.net_config, out / REN_CHECKPOINT, NetworkKind.pose_ren, digest
    )
    log = pd.DataFrame(
        [dataclasses.asdict(row) for row in cascade.log],
        columns=["network", "stage", "epoch", "lr", "loss"],
    )
    write_csv(log, out / TRAINING_LOG_FILE, digest)
    if cascade.mean_pose is not None:
        mean = cascade.mean_pose
        write_poses([HandPose(mean.normalized, mean.schema)], out / MEAN_POSE_FILE, digest)
    print(f"✅ Training set sizes per stage: {cascade.dataset_sizes}")
    print(f"✅ Checkpoints written to {out}")
    return 0


def _check_training_config(
    config: RunConfig, checkpoints: pathlib.Path, stored_hash: str | None
) -> None:
    if stored_hash is not None and stored_hash != config_hash(config):
        logger.warning(
            f"{checkpoints}: trained with config {stored_hash}, running with {config_hash(config)}"
        )
    path = checkpoints / RUN_CONFIG_FILE
    if not path.is_file():
        logger.warning(f"{path} not found, preprocessing settings are not checked")
        return
    try:
        trained = load_run_config(path)
    except ConfigError as exc:
        raise CheckpointError(CheckpointErrorCode.bad_config, str(exc)) from exc
    changed = [
        f"{key} {getattr(trained, key)} -> {getattr(config, key)}"
        for key in PREPROCESSING_KEYS
        if getattr(trained, key) != getattr(config, key)
    ]
    if changed:
        raise CheckpointError(
            CheckpointErrorCode.bad_config,
            f"{checkpoints}: preprocessing differs from training ({', '.join(changed)})",
        )


def load_cascade(config: RunConfig, checkpoints: pathlib.Path) -> TrainedCascade:
    """Both checkpoints of a ``train`` run. The run config must keep the preprocessing the models
    were trained with; any other difference from the training config only logs a warning."""
    init = load_checkpoint(checkpoints / INIT_CHECKPOINT)
    ren = load_checkpoint(checkpoints / REN_CHECKPOINT)
    if init.network != NetworkKind.init_cnn or ren.network != NetworkKind.pose_ren:
        raise CheckpointError(
            CheckpointErrorCode.bad_config,
            f"{checkpoints}: expected an Init-CNN and a Pose-REN checkpoint",
        )
    if init.config != ren.config:
        raise CheckpointError(
            CheckpointErrorCode.bad_config, f"{checkpoints}: checkpoints disagree on the network"
        )
    _check_training_config(config, checkpoints, ren.config_hash)
    mean_pose: MeanPose | None = None
    if (checkpoints / MEAN_POSE_FILE).is_file():
        stored = read_poses(checkpoints / MEAN_POSE_FILE)[0]
        mean_pose = MeanPose(stored.joints, stored.schema)
    return TrainedCascade(
        init_params=init.params,
        ren_params=ren.params,
        net_config=ren.config,
        config=config.cascade(),
        mean_pose=mean_pose,
    )


def cmd_infer(
    config: RunConfig,
    checkpoints: pathlib.Path,
    frames: pathlib.Path,
    out: pathlib.Path,
    iterations: int | None = None,
    init_pose: str | None = None,
) -> int:
    """Writes ``predictions.csv`` with every stage of every frame. ``init_pose`` is ``meanpose``
    or a predictions CSV whose stage-0 rows replace the Init-CNN."""
    cascade = load_cascade(config, checkpoints)
    data = load_dataset(frames)
    iterations = config.infer_iterations if iterations is None else iterations

    initializer: list[HandPose] | MeanPose | None = None
    if init_pose == "meanpose":
        if cascade.mean_pose is None:
            raise CheckpointError(
                CheckpointErrorCode.bad_config, f"{checkpoints}: no {MEAN_POSE_FILE}"
            )
        initializer = cascade.mean_pose
    elif init_pose is not None:
        initializer = read_predictions(pathlib.Path(init_pose))[0]

    stages = infer_batch(data.frames, data.camera, cascade, iterations, initializer)
    write_run_config(config, out)
    path = out / PREDICTIONS_FILE
    write_predictions(stages, path, config_hash(config))
    print(f"✅ {len(data)} frames x {len(stages)} stages written to {path}")
    return 0


def _print_stage_table(means: list[float]) -> None:
    print(f"{'stage':>5}  {'mean error (mm)':>15}")
    for stage, mean in enumerate(means):
        print(f"{stage:>5}  {mean:>15.3f}")


def cmd_eval(
    config: RunConfig, predictions: pathlib.Path, gt: pathlib.Path, out: pathlib.Path
) -> int:
    stages = read_predictions(predictions)
    truth = load_dataset(gt).poses
    reports = per_stage_report(stages, truth)
    curves = per_stage_curves(stages, truth, config.thresholds())
    write_run_config(config, out)
    export_stage_reports(reports, curves, out, config_hash(config))
    _print_stage_table([report.mean_error for report in reports])
    print(f"✅ Reports written to {out}")
    return 0


def cmd_report(
    config: RunConfig, predictions: pathlib.Path, gt: pathlib.Path, out: pathlib.Path | None
) -> int:
    """Mean error per stage, i.e. how accuracy changes with the number of iterations."""
    reports = per_stage_report(read_predictions(predictions), load_dataset(gt).poses)
    _print_stage_table([report.mean_error for report in reports])
    if out is not None:
        write_csv(stage_summary_frame(reports), out / "stages.csv", config_hash(config))
    return 0


def _print_gradcheck_table(rows: list[GradcheckRow]) -> None:
    width = max(len(row.op) for row in rows)
    print(f"{'op':<{width}}  {'configs':>7}  {'max rel. error':>14}  result")
    for row in rows:
        result = "ok" if row.passed else "FAIL"
        print(f"{row.op:<{width}}  {row.configs:>7}  {row.max_relative_error:>14.3e}  {result}")


def cmd_gradcheck(config: RunConfig) -> int:
    registry = {**op_cases(), **end_to_end_cases()}
    rows = run_gradcheck_suite(
        registry,
        configs_per_op=config.gradcheck_configs,
        eps=config.gradcheck_eps,
        tolerance=config.gradcheck_tolerance,
        seed=config.seed,
    )
    _print_gradcheck_table(rows)
    failed = [row.op for row in rows if not row.passed]
    if failed:
        logger.error(f"Gradient check failed for: {', '.join(failed)}")
        return 1
    worst = float(np.max([row.max_relative_error for row in rows]))
    print(f"✅ {len(rows)} cases passed (worst relative error {worst:.3e})")
    return 0

"""Accuracy metrics: mean per-joint error and the worst-joint success-rate curve."""

import collections.abc
import enum
import typing

import numpy as np
import numpy.typing as npt
import pydantic

from posecascade.data.domain import HandPose
from posecascade.geometry.domain import CameraIntrinsics, project_points
from posecascade.utils import CodedError


ErrorUnit = typing.Literal["mm", "px"]


class EvalErrorCode(str, enum.Enum):
    count_mismatch = "Predictions and ground truth are not aligned"
    ragged_stages = "Stages have different frame counts"
    bad_thresholds = "Thresholds must be ascending"
    missing_camera = "Pixel errors need the camera intrinsics"
    unwritable_path = "Cannot write the report"
    bad_file = "Cannot parse the file"


class EvalError(CodedError):
    pass


class EvalReport(pydantic.BaseModel):
    per_joint_errors: list[float]
    mean_error: float
    frame_count: int
    joint_count: int
    unit: ErrorUnit = "mm"


class SuccessCurve(pydantic.BaseModel):
    thresholds: list[float]
    rates: list[float]
    unit: ErrorUnit = "mm"


def default_thresholds() -> npt.NDArray[np.float64]:
    """0 to 80 mm in 1 mm steps."""
    return np.arange(0.0, 81.0, 1.0)


def _distances(
    pred: collections.abc.Sequence[HandPose],
    gt: collections.abc.Sequence[HandPose],
    mode: ErrorUnit,
    camera: CameraIntrinsics | None,
) -> npt.NDArray[np.float64]:
    """(N, J) Euclidean distance per frame and joint."""
    if len(pred) != len(gt) or not gt:
        raise EvalError(EvalErrorCode.count_mismatch, f"{len(pred)} predictions, {len(gt)} truths")
    joints = {pose.joint_count for pose in [*pred, *gt]}
    if len(joints) != 1:
        raise EvalError(EvalErrorCode.count_mismatch, f"joint counts {sorted(joints)}")
    predicted = np.stack([pose.joints for pose in pred])
    truth = np.stack([pose.joints for pose in gt])
    if mode == "px":
        if camera is None:
            raise EvalError(EvalErrorCode.missing_camera)
        predicted = project_points(predicted, camera)[..., :2]
        truth = project_points(truth, camera)[..., :2]
    return np.linalg.norm(predicted - truth, axis=-1)


def per_joint_errors(
    pred: collections.abc.Sequence[HandPose],
    gt: collections.abc.Sequence[HandPose],
    mode: ErrorUnit = "mm",
    camera: CameraIntrinsics | None = None,
) -> EvalReport:
    errors = _distances(pred, gt, mode, camera).mean(axis=0)
    return EvalReport(
        per_joint_errors=[float(e) for e in errors],
        mean_error=float(errors.mean()),
        frame_count=len(gt),
        joint_count=len(errors),
        unit=mode,
    )


def success_rate_curve(
    pred: collections.abc.Sequence[HandPose],
    gt: collections.abc.Sequence[HandPose],
    thresholds: npt.ArrayLike | None = None,
    mode: ErrorUnit = "mm",
    camera: CameraIntrinsics | None = None,
) -> SuccessCurve:
    """Fraction of frames whose largest joint error is within each threshold."""
    taus = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    if taus.ndim != 1 or np.any(np.diff(taus) <= 0):
        raise EvalError(EvalErrorCode.bad_thresholds, f"{taus}")
    worst = _distances(pred, gt, mode, camera).max(axis=1)
    rates = (worst[None, :] <= taus[:, None]).mean(axis=1) if len(taus) else np.zeros(0)
    return SuccessCurve(
        thresholds=[float(t) for t in taus], rates=[float(r) for r in rates], unit=mode
    )


def _check_stages(
    stages: collections.abc.Sequence[collections.abc.Sequence[HandPose]],
    gt: collections.abc.Sequence[HandPose],
) -> None:
    if not stages or any(len(poses) != len(gt) for poses in stages):
        raise EvalError(
            EvalErrorCode.ragged_stages,
            f"stage sizes {[len(poses) for poses in stages]} vs {len(gt)} truths",
        )


def per_stage_report(
    stages: collections.abc.Sequence[collections.abc.Sequence[HandPose]],
    gt: collections.abc.Sequence[HandPose],
    mode: ErrorUnit = "mm",
    camera: CameraIntrinsics | None = None,
) -> list[EvalReport]:
    """One report per stage 0..T."""
    _check_stages(stages, gt)
    return [per_joint_errors(poses, gt, mode, camera) for poses in stages]


def per_stage_curves(
    stages: collections.abc.Sequence[collections.abc.Sequence[HandPose]],
    gt: collections.abc.Sequence[HandPose],
    thresholds: npt.ArrayLike | None = None,
    mode: ErrorUnit = "mm",
    camera: CameraIntrinsics | None = None,
) -> list[SuccessCurve]:
    _check_stages(stages, gt)
    return [success_rate_curve(poses, gt, thresholds, mode, camera) for poses in stages]

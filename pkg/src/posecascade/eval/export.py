"""CSV files written and read by the command line.

Every file may start with a ``# config_hash=<hash>`` comment line; readers skip comments.
"""

import collections.abc
import logging
import pathlib

import numpy as np
import pandas as pd

from posecascade.data.domain import DatasetError, HandPose
from posecascade.eval.domain import EvalError, EvalErrorCode, EvalReport, SuccessCurve


logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.6f"


def write_csv(df: pd.DataFrame, path: pathlib.Path, config_hash: str | None = None) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as f:
            if config_hash is not None:
                f.write(f"# config_hash={config_hash}\n")
            df.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as exc:
        raise EvalError(EvalErrorCode.unwritable_path, f"{path}: {exc}") from exc
    logger.debug(f"Wrote {len(df)} rows to {path}")


def read_csv(path: pathlib.Path, columns: collections.abc.Sequence[str]) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, comment="#")
    except (OSError, ValueError) as exc:
        raise EvalError(EvalErrorCode.bad_file, f"{path}: {exc}") from exc
    missing = [column for column in columns if column not in df.columns]
    if missing:
        raise EvalError(EvalErrorCode.bad_file, f"{path}: missing columns {missing}")
    return df


def read_config_hash(path: pathlib.Path) -> str | None:
    with path.open(encoding="utf-8") as f:
        first = f.readline().strip()
    prefix = "# config_hash="
    return first[len(prefix) :] if first.startswith(prefix) else None


####################################################################################################
### REPORTS ########################################################################################
####################################################################################################


def report_frame(report: EvalReport) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "joint_index": np.arange(report.joint_count),
            f"error_{report.unit}": np.asarray(report.per_joint_errors, dtype=np.float64),
        }
    )


def curve_frame(curve: SuccessCurve) -> pd.DataFrame:
    return pd.DataFrame(
        {
            f"threshold_{curve.unit}": np.asarray(curve.thresholds, dtype=np.float64),
            "success_rate": np.asarray(curve.rates, dtype=np.float64),
        }
    )


def export_csv(
    item: EvalReport | SuccessCurve, path: pathlib.Path, config_hash: str | None = None
) -> None:
    """Per-joint errors (``joint_index,error_mm``) or a success curve
    (``threshold_mm,success_rate``)."""
    df = report_frame(item) if isinstance(item, EvalReport) else curve_frame(item)
    write_csv(df, path, config_hash)


def read_report_csv(path: pathlib.Path) -> EvalReport:
    df = read_csv(path, ["joint_index"])
    unit = "px" if "error_px" in df.columns else "mm"
    df = read_csv(path, ["joint_index", f"error_{unit}"])
    errors = df[f"error_{unit}"].to_numpy(dtype=np.float64)
    return EvalReport(
        per_joint_errors=[float(e) for e in errors],
        mean_error=float(errors.mean()) if len(errors) else 0.0,
        frame_count=0,
        joint_count=len(errors),
        unit=unit,
    )


def read_curve_csv(path: pathlib.Path) -> SuccessCurve:
    unit = "px" if "threshold_px" in read_csv(path, ["success_rate"]).columns else "mm"
    df = read_csv(path, [f"threshold_{unit}", "success_rate"])
    return SuccessCurve(
        thresholds=[float(t) for t in df[f"threshold_{unit}"]],
        rates=[float(r) for r in df["success_rate"]],
        unit=unit,
    )


def stage_summary_frame(reports: collections.abc.Sequence[EvalReport]) -> pd.DataFrame:
    unit = reports[0].unit if reports else "mm"
    return pd.DataFrame(
        {
            "stage": np.arange(len(reports)),
            f"mean_error_{unit}": np.asarray([r.mean_error for r in reports], dtype=np.float64),
        }
    )


def export_stage_reports(
    reports: collections.abc.Sequence[EvalReport],
    curves: collections.abc.Sequence[SuccessCurve],
    directory: pathlib.Path,
    config_hash: str | None = None,
) -> list[pathlib.Path]:
    """``stage_<t>_per_joint.csv`` and ``stage_<t>_success.csv`` per stage plus ``stages.csv``."""
    written: list[pathlib.Path] = []
    for stage, (report, curve) in enumerate(zip(reports, curves, strict=True)):
        for name, item in (("per_joint", report), ("success", curve)):
            path = directory / f"stage_{stage}_{name}.csv"
            export_csv(item, path, config_hash)
            written.append(path)
    summary = directory / "stages.csv"
    write_csv(stage_summary_frame(reports), summary, config_hash)
    written.append(summary)
    logger.info(f"Wrote {len(written)} report files to {directory}")
    return written


####################################################################################################
### POSES ##########################################################################################
####################################################################################################


def joint_columns(joint_count: int) -> list[str]:
    return [f"j{i}_{axis}" for i in range(joint_count) for axis in "xyz"]


def _joint_count(columns: collections.abc.Iterable[str]) -> int:
    return sum(1 for column in columns if column.startswith("j") and column.endswith("_x"))


def _to_poses(values: np.ndarray, source: pathlib.Path, schema: str) -> list[HandPose]:
    try:
        return [HandPose(row.reshape(-1, 3), schema) for row in values]
    except DatasetError as exc:
        raise EvalError(EvalErrorCode.bad_file, f"{source}: {exc}") from exc


def write_predictions(
    stages: collections.abc.Sequence[collections.abc.Sequence[HandPose]],
    path: pathlib.Path,
    config_hash: str | None = None,
) -> None:
    """One row per frame and stage: ``frame_index, stage, j0_x, ..., j{J-1}_z``, frame-major."""
    joint_count = stages[0][0].joint_count
    rows = [
        [frame, stage, *stages[stage][frame].joints.reshape(-1)]
        for frame in range(len(stages[0]))
        for stage in range(len(stages))
    ]
    df = pd.DataFrame(rows, columns=["frame_index", "stage", *joint_columns(joint_count)])
    write_csv(df, path, config_hash)
    logger.info(f"Wrote {len(stages[0])} frames x {len(stages)} stages to {path}")


def read_predictions(path: pathlib.Path, schema: str = "hand21") -> list[list[HandPose]]:
    """Inverse of ``write_predictions``: poses per stage, each list ordered by frame index."""
    df = read_csv(path, ["frame_index", "stage"])
    columns = joint_columns(_joint_count(df.columns))
    if not columns or any(column not in df.columns for column in columns):
        raise EvalError(EvalErrorCode.bad_file, f"{path}: incomplete joint columns")
    stages: list[list[HandPose]] = []
    frames: list[int] | None = None
    for _, group in df.sort_values(["stage", "frame_index"]).groupby("stage", sort=True):
        indices = [int(i) for i in group["frame_index"]]
        if frames is not None and indices != frames:
            raise EvalError(EvalErrorCode.ragged_stages, f"{path}")
        frames = indices
        stages.append(_to_poses(group[columns].to_numpy(dtype=np.float64), path, schema))
    if frames is None or frames != list(range(len(frames))):
        raise EvalError(EvalErrorCode.bad_file, f"{path}: frame indices must be 0..N-1")
    return stages


def write_poses(
    poses: collections.abc.Sequence[HandPose], path: pathlib.Path, config_hash: str | None = None
) -> None:
    """A plain pose table: ``index, j0_x, ..., j{J-1}_z``."""
    values = np.stack([pose.joints.reshape(-1) for pose in poses])
    df = pd.DataFrame(values, columns=joint_columns(poses[0].joint_count))
    df.insert(0, "index", np.arange(len(poses)))
    write_csv(df, path, config_hash)


def read_poses(path: pathlib.Path, schema: str = "hand21") -> list[HandPose]:
    df = read_csv(path, ["index"]).sort_values("index")
    columns = joint_columns(_joint_count(df.columns))
    if not columns or any(column not in df.columns for column in columns):
        raise EvalError(EvalErrorCode.bad_file, f"{path}: incomplete joint columns")
    return _to_poses(df[columns].to_numpy(dtype=np.float64), path, schema)

import pathlib

import numpy as np
import pytest

from posecascade.data.domain import HandPose
from posecascade.eval.domain import (
    EvalError,
    EvalErrorCode,
    default_thresholds,
    per_joint_errors,
    per_stage_curves,
    per_stage_report,
    success_rate_curve,
)
from posecascade.eval.export import (
    export_csv,
    export_stage_reports,
    read_config_hash,
    read_csv,
    read_curve_csv,
    read_poses,
    read_predictions,
    read_report_csv,
    write_poses,
    write_predictions,
)
from posecascade.geometry.domain import CameraIntrinsics


def _poses(rng: np.random.Generator, count: int, joints: int = 21) -> list[HandPose]:
    return [HandPose(rng.uniform(-100, 100, size=(joints, 3)) + [0, 0, 500]) for _ in range(count)]


def _jitter(rng: np.random.Generator, poses: list[HandPose], scale: float) -> list[HandPose]:
    return [HandPose(p.joints + rng.normal(0, scale, size=p.joints.shape)) for p in poses]


def test_metrics_match_brute_force(rng: np.random.Generator):
    for _ in range(100):
        n, j = int(rng.integers(1, 8)), int(rng.integers(1, 22))
        gt = _poses(rng, n, j)
        pred = _jitter(rng, gt, float(rng.uniform(1, 30)))
        thresholds = np.sort(rng.choice(np.arange(0.0, 120.0), size=5, replace=False))

        report = per_joint_errors(pred, gt)
        curve = success_rate_curve(pred, gt, thresholds)

        distances = [
            [
                sum((pred[f].joints[k, a] - gt[f].joints[k, a]) ** 2 for a in range(3)) ** 0.5
                for k in range(j)
            ]
            for f in range(n)
        ]
        for k in range(j):
            assert report.per_joint_errors[k] == pytest.approx(
                sum(distances[f][k] for f in range(n)) / n
            )
        assert report.mean_error == pytest.approx(sum(map(sum, distances)) / (n * j))
        for tau, rate in zip(thresholds, curve.rates, strict=True):
            within = sum(1 for f in range(n) if max(distances[f]) <= tau)
            assert rate == pytest.approx(within / n)


def test_success_rate_uses_the_worst_joint():
    gt = [HandPose(np.zeros((2, 3)) + [0, 0, 500]) for _ in range(3)]
    pred = [
        HandPose(gt[0].joints + [[5.0, 0, 0], [0, 0, 0]]),
        HandPose(gt[1].joints + [[5.0, 0, 0], [0, 15.0, 0]]),
        HandPose(gt[2].joints + [[0, 0, 30.0], [0, 0, 0]]),
    ]
    curve = success_rate_curve(pred, gt, thresholds=[5.0, 10.0, 20.0, 30.0])
    assert curve.rates == pytest.approx([1 / 3, 1 / 3, 2 / 3, 1.0])


def test_perfect_predictions(rng: np.random.Generator):
    gt = _poses(rng, 4)
    report = per_joint_errors(gt, gt)
    assert report.mean_error == 0.0
    assert report.per_joint_errors == [0.0] * 21
    curve = success_rate_curve(gt, gt)
    assert curve.thresholds == list(default_thresholds())
    assert curve.rates == [1.0] * 81


def test_rates_never_decrease(rng: np.random.Generator):
    gt = _poses(rng, 20)
    curve = success_rate_curve(_jitter(rng, gt, 10.0), gt)
    assert all(a <= b for a, b in zip(curve.rates, curve.rates[1:]))


def test_thresholds_must_ascend(rng: np.random.Generator):
    gt = _poses(rng, 2)
    for thresholds in ([10.0, 5.0], [1.0, 1.0]):
        with pytest.raises(EvalError) as error:
            success_rate_curve(gt, gt, thresholds)
        assert error.value.code == EvalErrorCode.bad_thresholds


def test_misaligned_inputs_are_rejected(rng: np.random.Generator):
    gt = _poses(rng, 3)
    with pytest.raises(EvalError) as error:
        per_joint_errors(gt[:2], gt)
    assert error.value.code == EvalErrorCode.count_mismatch
    with pytest.raises(EvalError) as error:
        per_joint_errors(_poses(rng, 3, joints=6), gt)
    assert error.value.code == EvalErrorCode.count_mismatch
    with pytest.raises(EvalError) as error:
        per_stage_report([gt, gt[:2]], gt)
    assert error.value.code == EvalErrorCode.ragged_stages


def test_pixel_errors(camera: CameraIntrinsics):
    gt = [HandPose(np.array([[0.0, 0.0, 500.0]]))]
    # 10 mm sideways at 500 mm is 160 · 10 / 500 px; depth changes do not count.
    pred = [HandPose(np.array([[10.0, 0.0, 520.0]]))]
    shifted = [HandPose(np.array([[0.0, 0.0, 520.0]]))]
    assert per_joint_errors(shifted, gt, mode="px", camera=camera).mean_error == pytest.approx(0.0)
    report = per_joint_errors(pred, gt, mode="px", camera=camera)
    assert report.unit == "px"
    assert report.mean_error == pytest.approx(160.0 * 10.0 / 520.0)
    with pytest.raises(EvalError) as error:
        per_joint_errors(pred, gt, mode="px")
    assert error.value.code == EvalErrorCode.missing_camera


def test_errors_ignore_a_common_translation(rng: np.random.Generator):
    gt = _poses(rng, 6)
    pred = _jitter(rng, gt, 12.0)
    shift = np.array([35.0, -20.0, 140.0])
    moved_gt = [HandPose(p.joints + shift) for p in gt]
    moved_pred = [HandPose(p.joints + shift) for p in pred]
    report = per_joint_errors(pred, gt)
    moved = per_joint_errors(moved_pred, moved_gt)
    assert np.allclose(moved.per_joint_errors, report.per_joint_errors, atol=1e-9)
    assert moved.mean_error == pytest.approx(report.mean_error)
    assert success_rate_curve(moved_pred, moved_gt).rates == success_rate_curve(pred, gt).rates


def test_report_csv_round_trip(rng: np.random.Generator, tmp_path: pathlib.Path):
    gt = _poses(rng, 5)
    pred = _jitter(rng, gt, 7.0)
    report = per_joint_errors(pred, gt)
    curve = success_rate_curve(pred, gt)

    export_csv(report, tmp_path / "errors.csv", config_hash="abc123")
    export_csv(curve, tmp_path / "curve.csv")
    assert read_config_hash(tmp_path / "errors.csv") == "abc123"
    assert read_config_hash(tmp_path / "curve.csv") is None
    assert (tmp_path / "errors.csv").read_text().splitlines()[1] == "joint_index,error_mm"

    loaded = read_report_csv(tmp_path / "errors.csv")
    assert np.allclose(loaded.per_joint_errors, report.per_joint_errors, atol=1e-6)
    loaded_curve = read_curve_csv(tmp_path / "curve.csv")
    assert loaded_curve.thresholds == curve.thresholds
    assert np.allclose(loaded_curve.rates, curve.rates, atol=1e-6)


def test_exports_are_byte_identical(rng: np.random.Generator, tmp_path: pathlib.Path):
    gt = _poses(rng, 5)
    pred = _jitter(rng, gt, 7.0)
    report = per_joint_errors(pred, gt)
    curve = success_rate_curve(pred, gt)
    for name in ("first", "second"):
        export_csv(report, tmp_path / name / "errors.csv", config_hash="abc123")
        export_csv(curve, tmp_path / name / "curve.csv", config_hash="abc123")
    for filename in ("errors.csv", "curve.csv"):
        first = (tmp_path / "first" / filename).read_bytes()
        assert first == (tmp_path / "second" / filename).read_bytes()


def test_empty_curve_writes_only_the_header(rng: np.random.Generator, tmp_path: pathlib.Path):
    gt = _poses(rng, 3)
    curve = success_rate_curve(gt, gt, thresholds=[])
    assert curve.thresholds == [] and curve.rates == []
    export_csv(curve, tmp_path / "curve.csv", config_hash="h")
    assert (tmp_path / "curve.csv").read_text() == "# config_hash=h\nthreshold_mm,success_rate\n"


def test_stage_reports_are_written_per_stage(rng: np.random.Generator, tmp_path: pathlib.Path):
    gt = _poses(rng, 4)
    stages = [_jitter(rng, gt, 20.0), _jitter(rng, gt, 5.0)]
    reports = per_stage_report(stages, gt)
    curves = per_stage_curves(stages, gt)
    written = export_stage_reports(reports, curves, tmp_path / "report", "h")
    assert sorted(path.name for path in written) == [
        "stage_0_per_joint.csv",
        "stage_0_success.csv",
        "stage_1_per_joint.csv",
        "stage_1_success.csv",
        "stages.csv",
    ]
    summary = read_csv(tmp_path / "report" / "stages.csv", ["stage", "mean_error_mm"])
    assert list(summary["stage"]) == [0, 1]
    assert np.allclose(summary["mean_error_mm"], [r.mean_error for r in reports], atol=1e-6)


def test_predictions_round_trip(rng: np.random.Generator, tmp_path: pathlib.Path):
    gt = _poses(rng, 3)
    stages = [_jitter(rng, gt, 10.0) for _ in range(3)]
    path = tmp_path / "predictions.csv"
    write_predictions(stages, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 1 + 3 * 3
    assert lines[1].startswith("0,0,") and lines[2].startswith("0,1,")

    loaded = read_predictions(path)
    assert len(loaded) == 3 and all(len(poses) == 3 for poses in loaded)
    for written, read in zip(stages, loaded, strict=True):
        for a, b in zip(written, read, strict=True):
            assert np.allclose(a.joints, b.joints, atol=1e-6)


def test_pose_table_round_trip(rng: np.random.Generator, tmp_path: pathlib.Path):
    poses = _poses(rng, 4, joints=6)
    write_poses(poses, tmp_path / "poses.csv")
    loaded = read_poses(tmp_path / "poses.csv", schema="tiny")
    assert [p.joint_count for p in loaded] == [6] * 4
    assert all(np.allclose(a.joints, b.joints, atol=1e-6) for a, b in zip(poses, loaded))


def test_unreadable_files(tmp_path: pathlib.Path):
    path = tmp_path / "broken.csv"
    path.write_text("frame_index,stage,j0_x\n0,0,1.0\n")
    with pytest.raises(EvalError) as error:
        read_predictions(path)
    assert error.value.code == EvalErrorCode.bad_file
    with pytest.raises(EvalError) as error:
        read_report_csv(tmp_path / "missing.csv")
    assert error.value.code == EvalErrorCode.bad_file

"""Tests for flow error metrics and stratified classification reports."""

import math

import numpy as np
import pytest

from dustflow.detect import LabeledSample
from dustflow.flow import FlowField
from dustflow.metrics import (
    ClassReport,
    FlowErrorReport,
    class_report,
    flow_errors,
    save_class_report,
    save_flow_report,
)
from dustflow.raster import Grid


def _field(u, v) -> FlowField:
    u = np.asarray(u, dtype=np.float64)
    return FlowField(u=Grid.from_2d(u), v=Grid.from_2d(np.asarray(v, dtype=np.float64)))


def _constant_field(rows, cols, u, v) -> FlowField:
    return FlowField(u=Grid.full(rows, cols, u), v=Grid.full(rows, cols, v))


def _sample(index, label, hour) -> LabeledSample:
    return LabeledSample.make(
        index=index, intensity=(0.1, 0.2, 0.3), emissivity=0.8, label=label, hour_of_day=hour
    )


# ---------------------------------------------------------------------------
# Flow errors: conventions and hand values


def test_perfect_estimate_has_zero_errors():
    # arccos of a floating-point cosine of 1 can wobble at the 1e-6-degree
    # level, so the angular zero is asserted to tolerance
    truth = _constant_field(3, 4, 1.5, -0.5)
    report = flow_errors(truth, truth)
    assert report.mean_abs_angular_error == pytest.approx(0.0, abs=1e-5)
    assert report.mean_abs_magnitude_error == 0.0
    assert np.allclose(report.angular.data, np.zeros(12), atol=1e-5)
    assert np.array_equal(report.magnitude.data, np.zeros(12))
    assert np.array_equal(report.mask.data, np.ones(12))


def test_orthogonal_unit_vectors_give_ninety_degrees():
    est = _constant_field(2, 2, 1.0, 0.0)
    truth = _constant_field(2, 2, 0.0, 1.0)
    report = flow_errors(est, truth)
    assert report.mean_abs_angular_error == pytest.approx(90.0, abs=1e-12)
    assert report.mean_abs_magnitude_error == 0.0


def test_opposite_vectors_give_180_degrees():
    est = _constant_field(1, 1, 2.0, 0.0)
    truth = _constant_field(1, 1, -3.0, 0.0)
    report = flow_errors(est, truth)
    assert report.mean_abs_angular_error == pytest.approx(180.0, abs=1e-6)
    assert report.mean_abs_magnitude_error == pytest.approx(1.0, abs=1e-12)


def test_zero_vector_conventions():
    # both zero: angular error 0; exactly one zero: angular error 90
    est = _field([[0.0, 0.0]], [[0.0, 0.0]])
    truth = _field([[0.0, 1.0]], [[0.0, 1.0]])
    report = flow_errors(est, truth)
    assert report.angular.data[0] == 0.0
    assert report.angular.data[1] == 90.0
    assert report.magnitude.data[0] == 0.0
    assert report.magnitude.data[1] == pytest.approx(math.hypot(1.0, 1.0), abs=1e-15)


def test_random_field_matches_per_pixel_oracle():
    rng = np.random.default_rng(17)
    rows, cols = 8, 8
    eu, ev = rng.normal(size=(rows, cols)), rng.normal(size=(rows, cols))
    tu, tv = rng.normal(size=(rows, cols)), rng.normal(size=(rows, cols))
    report = flow_errors(_field(eu, ev), _field(tu, tv))

    ang = report.angular.to_2d()
    mag = report.magnitude.to_2d()
    expected_ang = np.empty((rows, cols))
    expected_mag = np.empty((rows, cols))
    for i in range(rows):
        for j in range(cols):
            ne = math.hypot(eu[i, j], ev[i, j])
            nt = math.hypot(tu[i, j], tv[i, j])
            dot = eu[i, j] * tu[i, j] + ev[i, j] * tv[i, j]
            cosine = min(1.0, max(-1.0, dot / (ne * nt)))
            expected_ang[i, j] = math.degrees(math.acos(cosine))
            expected_mag[i, j] = abs(ne - nt)
    assert np.allclose(ang, expected_ang, rtol=0.0, atol=1e-10)
    assert np.allclose(mag, expected_mag, rtol=1e-12, atol=0.0)
    assert report.mean_abs_angular_error == pytest.approx(expected_ang.mean(), rel=1e-12)
    assert report.mean_abs_magnitude_error == pytest.approx(expected_mag.mean(), rel=1e-12)


def test_angular_error_is_symmetric_and_scale_invariant():
    rng = np.random.default_rng(23)
    for _ in range(10):
        eu, ev = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        tu, tv = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        fwd = flow_errors(_field(eu, ev), _field(tu, tv))
        rev = flow_errors(_field(tu, tv), _field(eu, ev))
        assert np.array_equal(fwd.angular.data, rev.angular.data)
        assert np.array_equal(fwd.magnitude.data, rev.magnitude.data)
        scale = rng.uniform(0.1, 10.0)
        scaled = flow_errors(_field(scale * eu, scale * ev), _field(tu, tv))
        assert np.allclose(scaled.angular.data, fwd.angular.data, rtol=0.0, atol=1e-9)


def test_magnitude_error_bounded_by_endpoint_distance():
    rng = np.random.default_rng(31)
    for _ in range(20):
        eu, ev = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
        tu, tv = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
        report = flow_errors(_field(eu, ev), _field(tu, tv))
        distance = np.hypot(eu - tu, ev - tv).ravel()
        assert np.all(report.magnitude.data <= distance + 1e-15)


def test_mask_restricts_the_means_but_not_the_grids():
    est = _field([[1.0, 0.0]], [[0.0, 0.0]])
    truth = _field([[1.0, 1.0]], [[0.0, 0.0]])
    mask = Grid(1, 2, [1.0, 0.0])
    report = flow_errors(est, truth, mask=mask)
    # only the first pixel (a perfect match) is averaged
    assert report.mean_abs_angular_error == 0.0
    assert report.mean_abs_magnitude_error == 0.0
    # the per-pixel grids still cover the excluded pixel, whose zero
    # estimate against a nonzero truth scores 90 degrees by convention
    assert report.angular.data[1] == 90.0
    assert report.magnitude.data[1] == pytest.approx(1.0, abs=1e-15)
    assert np.array_equal(report.mask.data, mask.data)


def test_flow_errors_validation():
    est = _constant_field(2, 2, 1.0, 0.0)
    with pytest.raises(ValueError, match="share dimensions"):
        flow_errors(est, _constant_field(2, 3, 1.0, 0.0))
    with pytest.raises(ValueError, match="mask must share"):
        flow_errors(est, est, mask=Grid.full(3, 3, 1.0))
    with pytest.raises(ValueError, match="binary"):
        flow_errors(est, est, mask=Grid(2, 2, [1.0, 0.5, 0.0, 1.0]))
    with pytest.raises(ValueError, match="mask is empty"):
        flow_errors(est, est, mask=Grid.full(2, 2, 0.0))


def test_flow_report_validates_ranges():
    zeros = Grid.full(1, 2, 0.0)
    with pytest.raises(ValueError, match="0, 180"):
        FlowErrorReport(0.0, 0.0, Grid(1, 2, [0.0, 181.0]), zeros, Grid.full(1, 2, 1.0))
    with pytest.raises(ValueError, match="nonnegative"):
        FlowErrorReport(0.0, 0.0, zeros, Grid(1, 2, [0.0, -1.0]), Grid.full(1, 2, 1.0))


# ---------------------------------------------------------------------------
# Classification reports


def test_all_correct_predictions_score_one():
    labels = [_sample(i, i % 2, hour=10.0) for i in range(10)]
    pred = Grid(1, 10, [float(i % 2) for i in range(10)])
    report = class_report(pred, labels, hour_buckets=12)
    assert report.overall_accuracy == 1.0
    assert report.dusty_accuracy == 1.0
    assert report.pristine_accuracy == 1.0
    assert report.n_samples == 10
    # hour 10 lands in bucket 5 of 12; all other buckets are empty
    assert report.dusty_counts[5] == 5
    assert report.pristine_counts[5] == 5
    assert report.dusty_correct[5] == 1.0
    assert report.pristine_correct[5] == 1.0


def test_complemented_predictions_score_zero():
    labels = [_sample(i, i % 2, hour=10.0) for i in range(10)]
    pred = Grid(1, 10, [float(1 - i % 2) for i in range(10)])
    report = class_report(pred, labels, hour_buckets=12)
    assert report.overall_accuracy == 0.0
    assert report.dusty_accuracy == 0.0
    assert report.pristine_accuracy == 0.0


def test_empty_strata_report_nan_fraction_and_zero_count():
    labels = [_sample(0, 1, hour=10.0), _sample(1, 0, hour=10.0)]
    pred = Grid(1, 2, [1.0, 0.0])
    report = class_report(pred, labels, hour_buckets=12)
    for b in range(12):
        if b == 5:
            continue
        assert report.dusty_counts[b] == 0
        assert report.pristine_counts[b] == 0
        assert math.isnan(report.dusty_correct[b])
        assert math.isnan(report.pristine_correct[b])


def test_single_class_input_marks_other_class_nan():
    labels = [_sample(i, 1, hour=12.0) for i in range(4)]
    pred = Grid(1, 4, [1.0, 1.0, 0.0, 1.0])
    report = class_report(pred, labels, hour_buckets=4)
    assert report.dusty_accuracy == 0.75
    assert math.isnan(report.pristine_accuracy)
    assert report.overall_accuracy == 0.75


def test_random_confusion_matches_loop_oracle():
    rng = np.random.default_rng(41)
    n, buckets = 200, 6
    labels = [
        _sample(i, int(rng.integers(0, 2)), hour=float(rng.uniform(0.0, 23.99)))
        for i in range(n)
    ]
    pred = Grid(1, n, rng.uniform(0.0, 1.0, size=n))
    report = class_report(pred, labels, hour_buckets=buckets)

    width = 24.0 / buckets
    per_bucket = {(b, c): [] for b in range(buckets) for c in (0, 1)}
    all_correct = []
    for s in labels:
        predicted = int(pred.data[s.index] > 0.5)
        correct = predicted == s.label
        all_correct.append(correct)
        per_bucket[(int(s.hour_of_day // width), s.label)].append(correct)
    assert report.overall_accuracy == pytest.approx(np.mean(all_correct), rel=1e-15)
    for b in range(buckets):
        for cls, frac, counts in (
            (1, report.dusty_correct, report.dusty_counts),
            (0, report.pristine_correct, report.pristine_counts),
        ):
            hits = per_bucket[(b, cls)]
            assert counts[b] == len(hits)
            if hits:
                assert frac[b] == pytest.approx(np.mean(hits), rel=1e-15)
            else:
                assert math.isnan(frac[b])
    assert report.dusty_counts.sum() + report.pristine_counts.sum() == n


def test_prediction_cutoff_is_strictly_above_half():
    labels = [_sample(0, 0, hour=1.0), _sample(1, 1, hour=1.0)]
    pred = Grid(1, 2, [0.5, 0.500001])  # 0.5 itself counts as pristine
    report = class_report(pred, labels, hour_buckets=1)
    assert report.overall_accuracy == 1.0


def test_predictions_are_addressed_by_sample_index():
    # out-of-order and sparse indices read from the flat prediction grid
    labels = [_sample(5, 1, hour=3.0), _sample(2, 0, hour=3.0)]
    pred = Grid(2, 3, [9.0, 9.0, 0.0, 9.0, 9.0, 1.0])
    report = class_report(pred, labels, hour_buckets=2)
    assert report.overall_accuracy == 1.0


def test_class_report_validation():
    labels = [_sample(0, 1, hour=5.0)]
    with pytest.raises(ValueError, match="hour_buckets must be positive"):
        class_report(Grid.full(1, 1, 1.0), labels, hour_buckets=0)
    with pytest.raises(ValueError, match="no labeled samples"):
        class_report(Grid.full(1, 1, 1.0), [])
    with pytest.raises(ValueError, match="cover all labeled pixels"):
        class_report(Grid.full(1, 1, 1.0), [_sample(3, 1, hour=5.0)])


def test_class_report_count_consistency_enforced():
    with pytest.raises(ValueError, match="counts must sum"):
        ClassReport(
            hour_buckets=1,
            dusty_correct=np.array([1.0]),
            pristine_correct=np.array([1.0]),
            dusty_counts=np.array([1]),
            pristine_counts=np.array([1]),
            dusty_accuracy=1.0,
            pristine_accuracy=1.0,
            overall_accuracy=1.0,
            n_samples=5,
        )


# ---------------------------------------------------------------------------
# Report serialization


def test_flow_report_serialization_is_flat_key_value(tmp_path):
    est = _field([[1.0, 0.0]], [[0.0, 0.0]])
    truth = _field([[1.0, 1.0]], [[0.0, 0.0]])
    report = flow_errors(est, truth, mask=Grid(1, 2, [1.0, 0.0]))
    path = tmp_path / "flow_report.txt"
    save_flow_report(report, path)
    assert path.read_text() == (
        "mean_abs_angular_error 0\nmean_abs_magnitude_error 0\nn_masked 1\n"
    )


def test_flow_report_serialization_real_values(tmp_path):
    report = flow_errors(_constant_field(2, 2, 1.0, 0.0), _constant_field(2, 2, 0.0, 2.0))
    path = tmp_path / "flow_report.txt"
    save_flow_report(report, path)
    parsed = dict(line.split(" ", 1) for line in path.read_text().splitlines())
    assert float(parsed["mean_abs_angular_error"]) == pytest.approx(90.0)
    assert float(parsed["mean_abs_magnitude_error"]) == pytest.approx(1.0)
    assert parsed["n_masked"] == "4"


def test_class_report_serialization_round_trips(tmp_path):
    labels = [_sample(i, i % 2, hour=10.0) for i in range(10)]
    pred = Grid(1, 10, [float(i % 2) for i in range(10)])
    report = class_report(pred, labels, hour_buckets=3)
    path = tmp_path / "class_report.txt"
    save_class_report(report, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 5 + 4 * 3
    parsed = dict(line.split(" ", 1) for line in lines)
    assert parsed["n_samples"] == "10"
    assert parsed["hour_buckets"] == "3"
    assert parsed["overall_accuracy"] == "1"
    # hour 10 of 3 buckets -> bucket 1; buckets 0 and 2 are empty
    assert parsed["bucket_1_dusty_count"] == "5"
    assert parsed["bucket_1_dusty_correct"] == "1"
    assert parsed["bucket_0_dusty_count"] == "0"
    assert parsed["bucket_0_dusty_correct"] == "nan"
    assert parsed["bucket_2_pristine_correct"] == "nan"

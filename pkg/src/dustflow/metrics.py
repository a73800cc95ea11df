"""Evaluation metrics: flow angular/magnitude errors and stratified accuracy.

Flow error conventions (fixed so results are reproducible): the angular
error between estimated and true vectors is 0 when both are zero and 90
degrees when exactly one is zero; the magnitude error is the absolute
difference of the vector norms.  Classification accuracy is reported per
class, overall, and stratified into hour-of-day buckets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detect import LabeledSample
from .flow import FlowField
from .raster import Grid, _format_value


@dataclass
class FlowErrorReport:
    """Per-pixel error grids plus means over the evaluation mask."""

    mean_abs_angular_error: float
    mean_abs_magnitude_error: float
    angular: Grid
    magnitude: Grid
    mask: Grid

    def __post_init__(self):
        a = self.angular.data
        if a.min() < 0.0 or a.max() > 180.0:
            raise ValueError("angular errors must lie in [0, 180] degrees")
        if self.magnitude.data.min() < 0.0:
            raise ValueError("magnitude errors must be nonnegative")


def flow_errors(est: FlowField, truth: FlowField, mask: Grid | None = None) -> FlowErrorReport:
    """Angular and magnitude error of an estimated flow against the truth.

    Per-pixel grids cover the full frame; the reported means average only
    over pixels where ``mask`` is 1 (default: everywhere).  The mask used is
    embedded in the report.
    """
    if not est.u.same_shape(truth.u):
        raise ValueError("estimate and truth must share dimensions")
    if mask is None:
        mask = Grid.full(est.rows, est.cols, 1.0)
    if not mask.same_shape(est.u):
        raise ValueError("mask must share the flow dimensions")
    if not np.all(np.isin(mask.data, (0.0, 1.0))):
        raise ValueError("mask must be binary")
    selected = mask.data > 0.5
    if not selected.any():
        raise ValueError("evaluation mask is empty")

    eu, ev = est.u.data, est.v.data
    tu, tv = truth.u.data, truth.v.data
    norm_e = np.hypot(eu, ev)
    norm_t = np.hypot(tu, tv)
    both_zero = (norm_e == 0) & (norm_t == 0)
    one_zero = (norm_e == 0) ^ (norm_t == 0)
    denom = np.where(norm_e * norm_t == 0, 1.0, norm_e * norm_t)
    cosine = np.clip((eu * tu + ev * tv) / denom, -1.0, 1.0)
    angular = np.degrees(np.arccos(cosine))
    angular[both_zero] = 0.0
    angular[one_zero] = 90.0
    magnitude = np.abs(norm_e - norm_t)

    return FlowErrorReport(
        mean_abs_angular_error=float(angular[selected].mean()),
        mean_abs_magnitude_error=float(magnitude[selected].mean()),
        angular=Grid(est.rows, est.cols, angular),
        magnitude=Grid(est.rows, est.cols, magnitude),
        mask=mask,
    )


@dataclass
class ClassReport:
    """Accuracy split by true class, overall and per hour-of-day bucket.

    Bucket b covers hours [b*24/n, (b+1)*24/n).  Empty strata carry count 0
    and a NaN fraction (undefined, deliberately distinct from 0).
    """

    hour_buckets: int
    dusty_correct: np.ndarray
    pristine_correct: np.ndarray
    dusty_counts: np.ndarray
    pristine_counts: np.ndarray
    dusty_accuracy: float
    pristine_accuracy: float
    overall_accuracy: float
    n_samples: int

    def __post_init__(self):
        for frac in (self.dusty_correct, self.pristine_correct):
            finite = frac[np.isfinite(frac)]
            if finite.size and (finite.min() < 0.0 or finite.max() > 1.0):
                raise ValueError("fractions must lie in [0, 1]")
        if int(self.dusty_counts.sum() + self.pristine_counts.sum()) != self.n_samples:
            raise ValueError("bucket counts must sum to the sample count")


def class_report(pred: Grid, labels: list[LabeledSample], hour_buckets: int = 12) -> ClassReport:
    """Compare binary predictions against labeled samples, stratified by hour.

    ``pred`` is addressed flat: prediction for a sample is
    ``pred.data[sample.index]``, so the grid must cover every labeled index.
    """
    if hour_buckets < 1:
        raise ValueError(f"hour_buckets must be positive, got {hour_buckets}")
    if not labels:
        raise ValueError("no labeled samples")
    flat = pred.data
    idx = np.array([s.index for s in labels], dtype=np.int64)
    if idx.min() < 0 or idx.max() >= flat.size:
        raise ValueError("predictions do not cover all labeled pixels")
    y = np.array([s.label for s in labels], dtype=np.int64)
    hours = np.array([s.hour_of_day for s in labels], dtype=np.float64)
    p = (flat[idx] > 0.5).astype(np.int64)
    correct = p == y
    bucket = np.clip((hours / (24.0 / hour_buckets)).astype(np.int64), 0, hour_buckets - 1)

    dusty_correct = np.full(hour_buckets, np.nan)
    pristine_correct = np.full(hour_buckets, np.nan)
    dusty_counts = np.zeros(hour_buckets, dtype=np.int64)
    pristine_counts = np.zeros(hour_buckets, dtype=np.int64)
    for b in range(hour_buckets):
        for cls, frac, counts in (
            (1, dusty_correct, dusty_counts),
            (0, pristine_correct, pristine_counts),
        ):
            sel = (bucket == b) & (y == cls)
            counts[b] = int(sel.sum())
            if counts[b]:
                frac[b] = float(correct[sel].mean())

    dusty_sel = y == 1
    return ClassReport(
        hour_buckets=hour_buckets,
        dusty_correct=dusty_correct,
        pristine_correct=pristine_correct,
        dusty_counts=dusty_counts,
        pristine_counts=pristine_counts,
        dusty_accuracy=float(correct[dusty_sel].mean()) if dusty_sel.any() else math.nan,
        pristine_accuracy=float(correct[~dusty_sel].mean()) if (~dusty_sel).any() else math.nan,
        overall_accuracy=float(correct.mean()),
        n_samples=len(labels),
    )


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "nan"
    return _format_value(float(x))


def save_flow_report(report: FlowErrorReport, path) -> None:
    """Flat 'key value' serialization of the masked error means."""
    lines = [
        f"mean_abs_angular_error {_fmt(report.mean_abs_angular_error)}",
        f"mean_abs_magnitude_error {_fmt(report.mean_abs_magnitude_error)}",
        f"n_masked {int(np.sum(report.mask.data > 0.5))}",
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def save_class_report(report: ClassReport, path) -> None:
    """Flat 'key value' serialization, one line per scalar and per bucket entry."""
    lines = [
        f"n_samples {report.n_samples}",
        f"hour_buckets {report.hour_buckets}",
        f"overall_accuracy {_fmt(report.overall_accuracy)}",
        f"dusty_accuracy {_fmt(report.dusty_accuracy)}",
        f"pristine_accuracy {_fmt(report.pristine_accuracy)}",
    ]
    for b in range(report.hour_buckets):
        lines.append(f"bucket_{b}_dusty_count {int(report.dusty_counts[b])}")
        lines.append(f"bucket_{b}_dusty_correct {_fmt(report.dusty_correct[b])}")
        lines.append(f"bucket_{b}_pristine_count {int(report.pristine_counts[b])}")
        lines.append(f"bucket_{b}_pristine_correct {_fmt(report.pristine_correct[b])}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")

"""Per-sequence scoring functions, weighted aggregation, and the paired t-test.

AUC is the exact continuous-threshold area under the success plot (the mean
overlap); NPS and GSR integrate their threshold curves in closed form
instead of sampling a grid, so results are deterministic and oracle-testable.
All scores range in [0, 100].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import (
    BinaryMask,
    Box,
    boundary_f_tolerance,
    boundary_pixels,
    box_fill_mask,
    box_iou,
    dilate_square,
    mask_iou,
    mask_to_box,
)
from .model import Track, is_absent

BOX = "box"
MASK = "mask"

METRIC_NAMES = ("auc", "nps", "gsr", "j", "f", "jf")


class MetricError(ValueError):
    """Empty series or otherwise unscorable input."""


@dataclass(frozen=True)
class OverlapSeries:
    """Per-timestamp overlaps against visible ground truth."""

    timestamps: tuple[int, ...]
    overlaps: tuple[float, ...]
    gt_absent_count: int = 0
    pred_on_absent_count: int = 0

    def __len__(self) -> int:
        return len(self.overlaps)


@dataclass(frozen=True)
class SequenceScore:
    pair_id: str
    view: str
    auc: float
    nps: float
    gsr: float
    j: float | None
    f: float | None
    jf: float | None
    weight: int

    def value(self, metric: str) -> float | None:
        return getattr(self, metric)


@dataclass(frozen=True)
class DeltaScore:
    metric: str
    delta: float
    fpv_mean: float
    tpv_mean: float
    total_weight: float


def state_as_box(state) -> Box | None:
    """Box form of a state: None for absent, tight box for masks."""
    if is_absent(state):
        return None
    if isinstance(state, Box):
        return state
    if state.positive_count == 0:
        return None
    return mask_to_box(state)


def state_as_mask(state, height: int, width: int) -> BinaryMask | None:
    """Mask form of a state: None for absent, filled raster for boxes."""
    if is_absent(state):
        return None
    if isinstance(state, BinaryMask):
        return state
    return box_fill_mask(state, height, width)


def _pair_overlap(pred, gt, mode: str, height: int, width: int) -> float:
    if mode == BOX:
        pb, gb = state_as_box(pred), state_as_box(gt)
        if pb is None or gb is None:
            return 0.0
        return box_iou(pb, gb)
    pm, gm = state_as_mask(pred, height, width), state_as_mask(gt, height, width)
    if pm is None or gm is None:
        return 0.0
    return mask_iou(pm, gm)


def overlap_series(
    pred: Track, gt: Track, mode: str = BOX,
    height: int = 0, width: int = 0,
) -> OverlapSeries:
    """Overlaps at every ground-truth timestamp with a visible target.

    Absent/missing predictions score 0; timestamps with absent ground truth
    are excluded from the series and only counted in the flags.
    """
    if mode not in (BOX, MASK):
        raise ValueError(f"unknown overlap mode {mode!r}")
    timestamps = []
    overlaps = []
    gt_absent = 0
    pred_on_absent = 0
    for t, gt_state in zip(gt.timestamps, gt.states):
        pred_state = pred.state_at(t)
        if is_absent(gt_state):
            gt_absent += 1
            if not is_absent(pred_state):
                pred_on_absent += 1
            continue
        timestamps.append(t)
        overlaps.append(_pair_overlap(pred_state, gt_state, mode, height, width))
    return OverlapSeries(
        tuple(timestamps), tuple(overlaps), gt_absent, pred_on_absent
    )


def auc(series: OverlapSeries) -> float:
    """100 x mean overlap (continuous-threshold area under the success plot)."""
    if len(series) == 0:
        raise MetricError("auc of an empty overlap series")
    return 100.0 * float(np.mean(series.overlaps))


def success_curve(
    series: OverlapSeries, thresholds: Sequence[float] | None = None
) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Sampled success plot S(tau) = fraction of overlaps strictly above tau."""
    if len(series) == 0:
        raise MetricError("success curve of an empty overlap series")
    taus = (
        np.linspace(0.0, 1.0, 51)
        if thresholds is None
        else np.asarray(thresholds, dtype=float)
    )
    o = np.asarray(series.overlaps, dtype=float)
    frac = (o[None, :] > taus[:, None]).mean(axis=1)
    return tuple(float(t) for t in taus), tuple(float(v) for v in frac)


def normalized_center_distances(
    pred: Track, gt: Track
) -> tuple[tuple[float, ...], int]:
    """Per-frame center distances normalized by ground-truth box size.

    Returns (distances, degenerate_gt_count); absent predictions map to
    +inf, ground-truth boxes with zero width or height are excluded and
    counted.
    """
    distances = []
    degenerate = 0
    for t, gt_state in zip(gt.timestamps, gt.states):
        if is_absent(gt_state):
            continue
        gb = state_as_box(gt_state)
        if gb is None or gb.w <= 0 or gb.h <= 0:
            degenerate += 1
            continue
        pb = state_as_box(pred.state_at(t))
        if pb is None:
            distances.append(math.inf)
            continue
        (pcx, pcy), (gcx, gcy) = pb.center, gb.center
        distances.append(
            math.hypot((pcx - gcx) / gb.w, (pcy - gcy) / gb.h)
        )
    return tuple(distances), degenerate


def nps(pred: Track, gt: Track) -> float:
    """Normalized precision: exact area under P(tau) for tau in [0, 0.5].

    P(tau) is the fraction of frames whose normalized center distance is
    at most tau; the integral reduces to sum(max(0, 0.5 - d)) / (0.5 n).
    """
    distances, _ = normalized_center_distances(pred, gt)
    if not distances:
        raise MetricError("nps of an empty series")
    n = len(distances)
    acc = sum(max(0.0, 0.5 - d) for d in distances if not math.isinf(d))
    return 100.0 * acc / (0.5 * n)


def gsr(series: OverlapSeries) -> float:
    """Generalized success robustness via exact threshold integration.

    For failure threshold tau the score is the normalized length of the
    leading prefix with overlap strictly above tau; integrating over
    tau in [0, 0.5] gives sum(min(prefix_min_k, 0.5)) / (0.5 n).
    """
    if len(series) == 0:
        raise MetricError("gsr of an empty overlap series")
    n = len(series)
    acc = 0.0
    running_min = math.inf
    for o in series.overlaps:
        running_min = min(running_min, o)
        acc += min(running_min, 0.5)
    return 100.0 * acc / (0.5 * n)


def region_j(
    pred_masks: Sequence[BinaryMask | None],
    gt_masks: Sequence[BinaryMask | None],
) -> float:
    """Mean mask IoU over frames with visible ground truth, scaled to 100."""
    if len(pred_masks) != len(gt_masks):
        raise MetricError("j: prediction/ground-truth length mismatch")
    values = []
    for pm, gm in zip(pred_masks, gt_masks):
        if gm is None:
            continue
        values.append(0.0 if pm is None else mask_iou(pm, gm))
    if not values:
        raise MetricError("j of an empty mask series")
    return 100.0 * float(np.mean(values))


def boundary_f_frame(
    pred: BinaryMask | None, gt: BinaryMask, tolerance: int
) -> float:
    """Per-frame boundary F-measure with square-dilation matching."""
    gt_b = boundary_pixels(gt).data
    pred_b = (
        np.zeros_like(gt_b) if pred is None else boundary_pixels(pred).data
    )
    n_pred = int(pred_b.sum())
    n_gt = int(gt_b.sum())
    if n_pred == 0 and n_gt == 0:
        return 1.0
    if n_pred == 0 or n_gt == 0:
        return 0.0
    precision = int((pred_b & dilate_square(gt_b, tolerance)).sum()) / n_pred
    recall = int((gt_b & dilate_square(pred_b, tolerance)).sum()) / n_gt
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def boundary_f(
    pred_masks: Sequence[BinaryMask | None],
    gt_masks: Sequence[BinaryMask | None],
    tolerance: int | None = None,
) -> float:
    """Mean per-frame boundary F over frames with visible ground truth."""
    if len(pred_masks) != len(gt_masks):
        raise MetricError("f: prediction/ground-truth length mismatch")
    values = []
    for pm, gm in zip(pred_masks, gt_masks):
        if gm is None:
            continue
        tol = (
            boundary_f_tolerance(gm.height, gm.width)
            if tolerance is None
            else tolerance
        )
        values.append(boundary_f_frame(pm, gm, tol))
    if not values:
        raise MetricError("f of an empty mask series")
    return 100.0 * float(np.mean(values))


def weighted_mean(scores: Sequence[tuple[float, float]]) -> float:
    """sum(v_i * w_i) / sum(w_i)."""
    if not scores:
        raise MetricError("weighted mean of nothing")
    total_w = sum(w for _, w in scores)
    if total_w <= 0:
        raise MetricError("weights sum to zero")
    return sum(v * w for v, w in scores) / total_w


def delta_sigma(
    per_pair: Sequence[tuple[float, float, float]], metric: str = "auc"
) -> DeltaScore:
    """Weighted signed FPV-minus-TPV difference for one metric.

    Evaluated as the difference of the weighted per-view means so the
    identity delta == fpv_mean - tpv_mean holds exactly in floating point;
    this equals the weighted mean of per-pair differences.
    """
    if not per_pair:
        raise MetricError("delta of an empty score list")
    fpv_mean = weighted_mean([(f, w) for f, _, w in per_pair])
    tpv_mean = weighted_mean([(t, w) for _, t, w in per_pair])
    total_w = sum(w for _, _, w in per_pair)
    return DeltaScore(
        metric=metric,
        delta=fpv_mean - tpv_mean,
        fpv_mean=fpv_mean,
        tpv_mean=tpv_mean,
        total_weight=total_w,
    )


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 3e-16:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Paired Student t-test; two-tailed p from the incomplete beta."""
    if len(a) != len(b):
        raise MetricError("paired t-test needs equal-length samples")
    n = len(a)
    if n < 2:
        raise MetricError("paired t-test needs at least 2 pairs")
    d = [ai - bi for ai, bi in zip(a, b)]
    mean_d = sum(d) / n
    ss = sum((di - mean_d) ** 2 for di in d)
    if ss == 0.0:
        if mean_d == 0.0:
            return 0.0, 1.0
        raise MetricError("zero-variance differences with nonzero mean")
    sd = math.sqrt(ss / (n - 1))
    t = mean_d / (sd / math.sqrt(n))
    dof = n - 1
    p = regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))
    return t, p

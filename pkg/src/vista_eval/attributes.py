"""Per-frame appearance/motion attributes and attribute-restricted scoring.

Twelve attributes are supported: SV, ARC, IV, DIS, MB, FM, LR, MR, HR, STA,
MOV, HOI. Geometric ones derive from annotations alone; IV/MB read frame
pixels; DIS/HOI consume precomputed detection files (the toolkit ships no
neural models). STA/MOV are computed on TPV and HOI on FPV, then copied to
the synchronized twin view.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Box, box_iou, barycenter, center_distance_bin, pixel_bounds
from .metrics import (
    MetricError,
    OverlapSeries,
    auc,
    gsr,
    state_as_box,
    weighted_mean,
)
from .model import (
    FPV,
    SequencePair,
    TPV,
    Track,
    is_absent,
    visibility_runs,
)

ATTRIBUTES = (
    "SV", "ARC", "IV", "DIS", "MB", "FM", "LR", "MR", "HR", "STA", "MOV", "HOI",
)


class AttributeUnavailable(RuntimeError):
    """Attribute cannot be computed from the provided inputs."""


@dataclass(frozen=True)
class AttributeThresholds:
    """All attribute decision constants, visible and overridable."""

    scale_ratio_range: tuple[float, float] = (0.5, 2.0)
    aspect_ratio_range: tuple[float, float] = (0.5, 2.0)
    illumination_distance: float = 0.15
    blur_variance: float = 100.0
    low_resolution_area: float = 32.0 ** 2
    high_resolution_area: float = 96.0 ** 2
    static_iou: float = 0.5
    distractor_cosine: float = 0.5
    distractor_iou: float = 0.5
    hoi_iou: float = 0.5

    def as_dict(self) -> dict:
        return {
            "scale_ratio_range": list(self.scale_ratio_range),
            "aspect_ratio_range": list(self.aspect_ratio_range),
            "illumination_distance": self.illumination_distance,
            "blur_variance": self.blur_variance,
            "low_resolution_area": self.low_resolution_area,
            "high_resolution_area": self.high_resolution_area,
            "static_iou": self.static_iou,
            "distractor_cosine": self.distractor_cosine,
            "distractor_iou": self.distractor_iou,
            "hoi_iou": self.hoi_iou,
        }


@dataclass
class AttributeTable:
    """Attribute bitsets keyed by annotated timestamp (one view)."""

    view: str
    flags: dict[int, set[str]] = field(default_factory=dict)
    unavailable: set[str] = field(default_factory=set)

    def set(self, t: int, attr: str) -> None:
        self.flags.setdefault(t, set()).add(attr)

    def has(self, t: int, attr: str) -> bool:
        return attr in self.flags.get(t, ())

    def timestamps_with(self, attr: str) -> list[int]:
        return sorted(t for t, flags in self.flags.items() if attr in flags)


@dataclass(frozen=True)
class Detection:
    box: Box
    embedding: np.ndarray | None = None
    interaction: bool = False


@dataclass(frozen=True)
class ExternalDetections:
    """Precomputed distractor/hand-object evidence for one view of one pair."""

    candidates: dict[int, tuple[Detection, ...]]
    hoi: dict[int, tuple[Detection, ...]]
    target_embedding: np.ndarray | None


def load_detections(path: str | Path) -> ExternalDetections:
    candidates: dict[int, tuple[Detection, ...]] = {}
    hoi: dict[int, tuple[Detection, ...]] = {}
    target = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            t = int(obj["t"])
            if "target_emb" in obj:
                target = _unit_embedding(obj["target_emb"], f"{path}:{lineno}")
                continue
            cands = []
            for c in obj.get("candidates", []):
                cands.append(
                    Detection(
                        box=Box(*(float(v) for v in c["box"])),
                        embedding=_unit_embedding(c["emb"], f"{path}:{lineno}"),
                    )
                )
            hands = []
            for h in obj.get("hoi", []):
                hands.append(
                    Detection(
                        box=Box(*(float(v) for v in h["box"])),
                        interaction=bool(h.get("state", False)),
                    )
                )
            candidates[t] = tuple(cands)
            hoi[t] = tuple(hands)
    return ExternalDetections(candidates=candidates, hoi=hoi, target_embedding=target)


def _unit_embedding(values, source: str) -> np.ndarray:
    emb = np.asarray(values, dtype=np.float64)
    norm = float(np.linalg.norm(emb))
    if abs(norm - 1.0) > 1e-3:
        raise ValueError(f"{source}: embedding norm {norm:.4f} is not unit")
    return emb


def _gt_boxes(track: Track) -> dict[int, Box]:
    boxes = {}
    for t, state in zip(track.timestamps, track.states):
        if is_absent(state):
            continue
        box = state_as_box(state)
        if box is not None:
            boxes[t] = box
    return boxes


def box_attributes(
    track: Track,
    table: AttributeTable,
    thresholds: AttributeThresholds = AttributeThresholds(),
) -> AttributeTable:
    """SV, ARC, FM and the LR/MR/HR resolution partition."""
    boxes = _gt_boxes(track)
    first = boxes.get(track.timestamps[0] if track.timestamps else 0)
    ref_area = first.area if first is not None else 0.0
    ref_aspect = first.w / first.h if first is not None and first.h > 0 else 0.0
    if ref_area <= 0 or ref_aspect <= 0:
        table.unavailable.update({"SV", "ARC"})
    lo_s, hi_s = thresholds.scale_ratio_range
    lo_a, hi_a = thresholds.aspect_ratio_range
    for t, box in boxes.items():
        area = box.area
        if area < thresholds.low_resolution_area:
            table.set(t, "LR")
        elif area <= thresholds.high_resolution_area:
            table.set(t, "MR")
        else:
            table.set(t, "HR")
        if "SV" not in table.unavailable and ref_area > 0:
            ratio = area / ref_area
            if not (lo_s <= ratio <= hi_s):
                table.set(t, "SV")
        if "ARC" not in table.unavailable and box.h > 0 and ref_aspect > 0:
            ratio = (box.w / box.h) / ref_aspect
            if not (lo_a <= ratio <= hi_a):
                table.set(t, "ARC")
    # fast motion: center displacement between consecutive annotations of a run
    for start, end in visibility_runs(track):
        step = track.grid_step
        prev = None
        for t in range(start, end + 1, step):
            box = boxes.get(t)
            if box is None:
                prev = None
                continue
            if prev is not None:
                (px, py), (cx, cy) = prev.center, box.center
                size = math.sqrt(prev.w * prev.h)
                if math.hypot(cx - px, cy - py) > size:
                    table.set(t, "FM")
            prev = box
    return table


def _load_frame(path: str) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64)


def _crop(frame: np.ndarray, box: Box) -> np.ndarray:
    h, w = frame.shape[:2]
    r0, r1, c0, c1 = pixel_bounds(box, h, w)
    return frame[r0:r1, c0:c1]


def laplacian_variance(gray: np.ndarray) -> float:
    """Variance of the 3x3 Laplacian response, valid region only."""
    if gray.shape[0] < 3 or gray.shape[1] < 3:
        raise ValueError("crop smaller than the 3x3 Laplacian kernel")
    center = gray[1:-1, 1:-1]
    lap = (
        gray[:-2, 1:-1] + gray[2:, 1:-1] + gray[1:-1, :-2] + gray[1:-1, 2:]
        - 4.0 * center
    )
    return float(lap.var())


def pixel_attributes(
    track: Track,
    view_sequence,
    table: AttributeTable,
    thresholds: AttributeThresholds = AttributeThresholds(),
) -> AttributeTable:
    """IV (mean-color change vs first patch) and MB (Laplacian variance)."""
    boxes = _gt_boxes(track)
    if not boxes:
        table.unavailable.update({"IV", "MB"})
        return table
    first_t = min(boxes)
    first_crop = _crop(_load_frame(view_sequence.frame_path(first_t)), boxes[first_t])
    if first_crop.size == 0:
        table.unavailable.update({"IV", "MB"})
        return table
    ref_color = first_crop.reshape(-1, 3).mean(axis=0) / 255.0
    for t, box in boxes.items():
        crop = _crop(_load_frame(view_sequence.frame_path(t)), box)
        if crop.size == 0:
            continue
        color = crop.reshape(-1, 3).mean(axis=0) / 255.0
        if float(np.linalg.norm(color - ref_color)) > thresholds.illumination_distance:
            table.set(t, "IV")
        gray = (
            0.299 * crop[:, :, 0] + 0.587 * crop[:, :, 1] + 0.114 * crop[:, :, 2]
        )
        if gray.shape[0] >= 3 and gray.shape[1] >= 3:
            if laplacian_variance(gray) < thresholds.blur_variance:
                table.set(t, "MB")
    return table


def motion_state(
    pair: SequencePair,
    tables: dict[str, AttributeTable],
    thresholds: AttributeThresholds = AttributeThresholds(),
) -> dict[str, AttributeTable]:
    """STA/MOV from TPV box overlap between consecutive annotations.

    The TPV camera is stationary, so annotation overlap change during
    visibility is object motion; labels are copied to the FPV twin frames.
    """
    track = pair.tpv.annotations
    boxes = _gt_boxes(track)
    step = track.grid_step
    for start, end in visibility_runs(track):
        prev = None
        for t in range(start, end + 1, step):
            box = boxes.get(t)
            if box is None:
                prev = None
                continue
            if prev is not None:
                label = (
                    "STA" if box_iou(prev, box) > thresholds.static_iou else "MOV"
                )
                tables[TPV].set(t, label)
                tables[FPV].set(t, label)
            prev = box
    return tables


def distractor_attr(
    track: Track,
    detections: ExternalDetections | None,
    table: AttributeTable,
    thresholds: AttributeThresholds = AttributeThresholds(),
) -> AttributeTable:
    """DIS: some candidate looks like the target but sits elsewhere."""
    if detections is None or detections.target_embedding is None:
        table.unavailable.add("DIS")
        return table
    target = detections.target_embedding
    boxes = _gt_boxes(track)
    for t, box in boxes.items():
        for cand in detections.candidates.get(t, ()):
            if cand.embedding is None:
                continue
            cosine = float(np.dot(cand.embedding, target))
            if (
                cosine > thresholds.distractor_cosine
                and box_iou(cand.box, box) < thresholds.distractor_iou
            ):
                table.set(t, "DIS")
                break
    return table


def hoi_attr(
    pair: SequencePair,
    detections: ExternalDetections | None,
    tables: dict[str, AttributeTable],
    thresholds: AttributeThresholds = AttributeThresholds(),
) -> dict[str, AttributeTable]:
    """HOI state machine driven by FPV hand-object evidence.

    Turns on at the second of two grid-consecutive annotations with
    interacting high-overlap detections; turns off at the second of two
    grid-consecutive annotations whose detections all miss the target and
    carry no interaction state. Frames without any detection keep the
    current state. Labels are copied to TPV.
    """
    if detections is None:
        for table in tables.values():
            table.unavailable.add("HOI")
        return tables
    track = pair.fpv.annotations
    boxes = _gt_boxes(track)
    step = track.grid_step
    timestamps = sorted(boxes)

    def on_evidence(t: int) -> bool:
        return any(
            d.interaction and box_iou(boxes[t], d.box) > thresholds.hoi_iou
            for d in detections.hoi.get(t, ())
        )

    def off_evidence(t: int) -> bool:
        dets = detections.hoi.get(t, ())
        if not dets:
            return False
        return all(not d.interaction for d in dets) and all(
            box_iou(boxes[t], d.box) < thresholds.hoi_iou for d in dets
        )

    active = False
    prev_t = None
    for t in timestamps:
        adjacent = prev_t is not None and t - prev_t == step
        if not active:
            if adjacent and on_evidence(prev_t) and on_evidence(t):
                active = True
        else:
            if adjacent and off_evidence(prev_t) and off_evidence(t):
                active = False
        if active:
            tables[FPV].set(t, "HOI")
            tables[TPV].set(t, "HOI")
        prev_t = t
    return tables


def compute_pair_attributes(
    pair: SequencePair,
    thresholds: AttributeThresholds = AttributeThresholds(),
    detections: dict[str, ExternalDetections] | None = None,
    pixels: bool = False,
) -> dict[str, AttributeTable]:
    """Full attribute tables for both views of one pair."""
    tables = {FPV: AttributeTable(FPV), TPV: AttributeTable(TPV)}
    for name, table in tables.items():
        vs = pair.view(name)
        box_attributes(vs.annotations, table, thresholds)
        if pixels:
            pixel_attributes(vs.annotations, vs, table, thresholds)
        else:
            table.unavailable.update({"IV", "MB"})
        distractor_attr(
            vs.annotations,
            detections.get(name) if detections else None,
            table,
            thresholds,
        )
    motion_state(pair, tables, thresholds)
    hoi_attr(
        pair, detections.get(FPV) if detections else None, tables, thresholds
    )
    return tables


# ---------------------------------------------------------------------------
# Attribute- and position-restricted scoring


@dataclass(frozen=True)
class FilteredScore:
    label: str
    metric: str
    view_means: dict[str, float]
    view_weights: dict[str, float]
    sequences_used: dict[str, int]
    delta: float | None


def _restricted_metric(
    series: OverlapSeries, keep: set[int], metric: str
) -> tuple[float, int] | None:
    idx = [i for i, t in enumerate(series.timestamps) if t in keep]
    if not idx:
        return None
    sub = OverlapSeries(
        tuple(series.timestamps[i] for i in idx),
        tuple(series.overlaps[i] for i in idx),
    )
    if metric == "auc":
        return auc(sub), len(idx)
    if metric == "gsr":
        return gsr(sub), len(idx)
    raise MetricError(f"unsupported filtered metric {metric!r}")


def attribute_filtered_scores(
    entries: list[tuple[str, dict[str, OverlapSeries], dict[str, set[int]]]],
    attribute: str,
    metric: str = "auc",
) -> FilteredScore:
    """Weighted metric over only the frames carrying an attribute.

    ``entries`` rows are (pair_id, per-view overlap series, per-view flagged
    timestamp sets); each sequence weighs in with its flagged-frame count,
    and sequences without flagged frames are excluded.
    """
    per_view: dict[str, list[tuple[float, float]]] = {FPV: [], TPV: []}
    for _, series_by_view, flagged_by_view in entries:
        for view, series in series_by_view.items():
            keep = flagged_by_view.get(view, set())
            restricted = _restricted_metric(series, keep, metric)
            if restricted is None:
                continue
            value, count = restricted
            per_view[view].append((value, float(count)))
    means: dict[str, float] = {}
    weights: dict[str, float] = {}
    used: dict[str, int] = {}
    for view, rows in per_view.items():
        if not rows:
            continue
        means[view] = weighted_mean(rows)
        weights[view] = sum(w for _, w in rows)
        used[view] = len(rows)
    if not means:
        raise AttributeUnavailable(
            f"attribute {attribute!r}: no flagged frames in any sequence"
        )
    delta = (
        means[FPV] - means[TPV] if FPV in means and TPV in means else None
    )
    return FilteredScore(
        label=attribute,
        metric=metric,
        view_means=means,
        view_weights=weights,
        sequences_used=used,
        delta=delta,
    )


def center_distance_tables(pair: SequencePair) -> dict[str, dict[int, int]]:
    """Per-view mapping of annotated timestamp -> center-distance bin.

    Positions use the mask barycenter when the annotation is a mask, the
    box center otherwise.
    """
    out: dict[str, dict[int, int]] = {}
    for name in (FPV, TPV):
        vs = pair.view(name)
        bins: dict[int, int] = {}
        for t, state in zip(vs.annotations.timestamps, vs.annotations.states):
            if is_absent(state):
                continue
            if isinstance(state, Box):
                point = state.center
            else:
                if state.positive_count == 0:
                    continue
                point = barycenter(state)
            bins[t] = center_distance_bin(point, vs.width, vs.height)
        out[name] = bins
    return out

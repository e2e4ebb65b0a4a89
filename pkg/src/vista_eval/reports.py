"""Report assembly and emission: bias plots, breakdowns, tables, run dirs.

SVG output is hand-generated with fixed 6-decimal coordinates and carries
no timestamps, so identical inputs produce byte-identical files. A run
directory is named by a content hash of the run configuration.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .metrics import METRIC_NAMES, DeltaScore, SequenceScore, delta_sigma, weighted_mean
from .model import FPV, TPV
from .runner import EvalOutcome, FailureRecord

TOOLKIT_VERSION = "0.1.0"

_PALETTE = (
    "#5dade2", "#154360", "#58d68d", "#196f3d", "#ff6666", "#800000",
    "#f39c12", "#7d3c98", "#117a65", "#2e4053",
)


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class BiasPlotPoint:
    label: str
    x: float  # sigma-TPV
    y: float  # sigma-FPV
    marker: str = "generic"

    @property
    def delta(self) -> float:
        return self.y - self.x


@dataclass
class TrackerReport:
    label: str
    protocol: str
    scores: list[SequenceScore]
    view_means: dict[str, dict[str, float]]
    view_means_unweighted: dict[str, dict[str, float]]
    deltas: dict[str, DeltaScore]
    t_tests: dict[str, tuple[float, float]]
    success_curves: dict[str, tuple[tuple[float, ...], tuple[float, ...]]]
    failures: list[FailureRecord]
    dropped_short_runs: int = 0
    attribute_rows: list[dict] = field(default_factory=list)
    center_distance_rows: list[dict] = field(default_factory=list)


@dataclass
class EvalReport:
    config: dict
    thresholds: dict
    trackers: list[TrackerReport]
    version: str = TOOLKIT_VERSION


def tracker_report_from_outcome(
    label: str, outcome: EvalOutcome
) -> TrackerReport:
    scores = [outcome.scores[key] for key in sorted(outcome.scores)]
    return TrackerReport(
        label=label,
        protocol=outcome.protocol,
        scores=scores,
        view_means=outcome.view_means,
        view_means_unweighted=outcome.view_means_unweighted,
        deltas=outcome.deltas,
        t_tests=outcome.t_tests,
        success_curves=outcome.success_curves,
        failures=list(outcome.failures),
        dropped_short_runs=outcome.dropped_short_runs,
    )


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


# ---------------------------------------------------------------------------
# SVG primitives


def _fmt(v: float) -> str:
    return f"{v:.6f}"


class _Svg:
    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.parts: list[str] = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">'
        ]

    def line(self, x1, y1, x2, y2, stroke="#333333", width=1.0, dash=None):
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" '
            f'y2="{_fmt(y2)}" stroke="{stroke}" '
            f'stroke-width="{_fmt(width)}"{dash_attr}/>'
        )

    def circle(self, cx, cy, r, fill):
        self.parts.append(
            f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(r)}" '
            f'fill="{fill}"/>'
        )

    def rect(self, x, y, w, h, fill, stroke="none"):
        self.parts.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" '
            f'height="{_fmt(h)}" fill="{fill}" stroke="{stroke}"/>'
        )

    def text(self, x, y, content, size=11, anchor="start", fill="#222222"):
        self.parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-family="sans-serif" '
            f'font-size="{size}" text-anchor="{anchor}" fill="{fill}">'
            f"{_escape(content)}</text>"
        )

    def polyline(self, points, stroke, width=1.5, dash=None):
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{stroke}" '
            f'stroke-width="{_fmt(width)}"{dash_attr}/>'
        )

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _escape(text: str) -> str:
    return (
        str(text)
        .replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
    )


# ---------------------------------------------------------------------------
# Bias plot


def render_bias_plot(points: list[BiasPlotPoint], metric: str) -> str:
    """Scatter of (sigma-TPV, sigma-FPV) with the view-independence diagonal."""
    if not points:
        raise ReportError("bias plot requires at least one point")
    size, margin = 420, 50
    plot = size - 2 * margin
    svg = _Svg(size + 200, size)

    def sx(v: float) -> float:
        return margin + plot * v / 100.0

    def sy(v: float) -> float:
        return size - margin - plot * v / 100.0

    svg.rect(margin, margin, plot, plot, fill="#ffffff", stroke="#888888")
    for tick in range(0, 101, 20):
        svg.line(sx(tick), size - margin, sx(tick), size - margin + 4)
        svg.text(sx(tick), size - margin + 16, str(tick), size=9, anchor="middle")
        svg.line(margin - 4, sy(tick), margin, sy(tick))
        svg.text(margin - 7, sy(tick) + 3, str(tick), size=9, anchor="end")
    # solid diagonal marks view-independent performance
    svg.line(sx(0), sy(0), sx(100), sy(100), stroke="#444444", width=1.2)
    svg.text(size / 2, size - 12, f"{metric.upper()}-TPV", anchor="middle")
    svg.text(14, size / 2, f"{metric.upper()}-FPV", anchor="middle")

    ordered = sorted(points, key=lambda p: (-p.delta, p.label))
    for idx, point in enumerate(ordered):
        color = _PALETTE[idx % len(_PALETTE)]
        svg.circle(sx(point.x), sy(point.y), 5.0, fill=color)
        ly = margin + 16 * idx
        svg.circle(size + 10, ly + 4, 4.0, fill=color)
        svg.text(
            size + 20,
            ly + 8,
            f"{point.label} ({point.y:.1f}, {point.x:.1f}, {point.delta:+.1f})",
            size=10,
        )
    return svg.render()


def emit_bias_plot(
    points: list[BiasPlotPoint], metric: str, out_dir: Path
) -> tuple[Path, Path]:
    svg_path = out_dir / f"bias_{metric}.svg"
    csv_path = out_dir / f"bias_{metric}.csv"
    svg_path.write_text(render_bias_plot(points, metric), encoding="utf-8")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tracker", "tpv", "fpv", "delta"])
        for p in sorted(points, key=lambda p: (-p.delta, p.label)):
            writer.writerow([p.label, repr(p.x), repr(p.y), repr(p.delta)])
    return svg_path, csv_path


def read_bias_csv(path: Path) -> list[BiasPlotPoint]:
    points = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            points.append(
                BiasPlotPoint(
                    label=row["tracker"],
                    x=float(row["tpv"]),
                    y=float(row["fpv"]),
                )
            )
    return points


# ---------------------------------------------------------------------------
# Center-distance report


BIN_LABELS = ("<25%", "25-50%", "50-75%", ">75%")


def render_center_distance_chart(rows: list[dict]) -> str:
    """AUC vs distance bin; solid lines join FPV scores, dashed TPV."""
    size, margin = 360, 48
    plot = size - 2 * margin
    svg = _Svg(size + 190, size)

    def sx(b: int) -> float:
        return margin + plot * b / 3.0

    def sy(v: float) -> float:
        return size - margin - plot * v / 100.0

    svg.rect(margin, margin, plot, plot, fill="#ffffff", stroke="#888888")
    for b, label in enumerate(BIN_LABELS):
        svg.text(sx(b), size - margin + 16, label, size=9, anchor="middle")
    for tick in range(0, 101, 20):
        svg.text(margin - 7, sy(tick) + 3, str(tick), size=9, anchor="end")
    svg.text(size / 2, size - 10, "distance from frame center", anchor="middle")

    trackers = sorted({row["tracker"] for row in rows})
    for idx, tracker in enumerate(trackers):
        color = _PALETTE[idx % len(_PALETTE)]
        for view, dash in ((FPV, None), (TPV, "5,4")):
            pts = [
                (sx(row["bin"]), sy(row["value"]))
                for row in rows
                if row["tracker"] == tracker
                and row["view"] == view
                and row["value"] is not None
            ]
            if len(pts) >= 2:
                svg.polyline(pts, stroke=color, dash=dash)
            for x, y in pts:
                svg.circle(x, y, 3.0, fill=color)
        ly = margin + 16 * idx
        svg.circle(size + 10, ly + 4, 4.0, fill=color)
        svg.text(size + 20, ly + 8, tracker, size=10)
    return svg.render()


def emit_center_distance_report(rows: list[dict], out_dir: Path) -> tuple[Path, Path]:
    csv_path = out_dir / "center_distance.csv"
    svg_path = out_dir / "center_distance.svg"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["tracker", "view", "bin", "bin_label", "value", "weight",
             "sequences", "populated"]
        )
        for row in sorted(
            rows, key=lambda r: (r["tracker"], r["view"], r["bin"])
        ):
            writer.writerow(
                [
                    row["tracker"],
                    row["view"],
                    row["bin"],
                    BIN_LABELS[row["bin"]],
                    "" if row["value"] is None else repr(row["value"]),
                    row["weight"],
                    row["sequences"],
                    int(row["value"] is not None),
                ]
            )
    svg_path.write_text(render_center_distance_chart(rows), encoding="utf-8")
    return csv_path, svg_path


# ---------------------------------------------------------------------------
# Tables


def _metric_columns() -> list[str]:
    cols = []
    for metric in METRIC_NAMES:
        cols.extend(
            [f"{metric}_fpv", f"{metric}_tpv", f"delta_{metric}"]
        )
    return cols


def _table_rows(report: EvalReport, weighted: bool) -> list[dict]:
    rows = []
    for tracker in sorted(report.trackers, key=lambda t: t.label):
        means = tracker.view_means if weighted else tracker.view_means_unweighted
        row: dict = {"tracker": tracker.label,
                     "weighting": "weighted" if weighted else "unweighted"}
        for metric in METRIC_NAMES:
            fpv = means.get(FPV, {}).get(metric)
            tpv = means.get(TPV, {}).get(metric)
            row[f"{metric}_fpv"] = fpv
            row[f"{metric}_tpv"] = tpv
            row[f"delta_{metric}"] = (
                fpv - tpv if fpv is not None and tpv is not None else None
            )
        rows.append(row)
    return rows


def emit_tables(report: EvalReport, out_dir: Path) -> tuple[Path, Path]:
    """Per-view metric tables, weighted and unweighted, as CSV + Markdown."""
    rows = _table_rows(report, weighted=True) + _table_rows(report, weighted=False)
    columns = ["tracker", "weighting"] + _metric_columns()
    csv_path = out_dir / "tables.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(
                ["" if row[c] is None else
                 (row[c] if isinstance(row[c], str) else repr(row[c]))
                 for c in columns]
            )
    md = io.StringIO()
    md.write("| " + " | ".join(columns) + " |\n")
    md.write("|" + "---|" * len(columns) + "\n")
    for row in rows:
        cells = [
            row[c] if isinstance(row[c], str)
            else ("" if row[c] is None else f"{row[c]:.2f}")
            for c in columns
        ]
        md.write("| " + " | ".join(cells) + " |\n")
    md_path = out_dir / "tables.md"
    md_path.write_text(md.getvalue(), encoding="utf-8")
    return csv_path, md_path


# ---------------------------------------------------------------------------
# Whole-report persistence


_SCORE_FIELDS = ("pair_id", "view", "auc", "nps", "gsr", "j", "f", "jf", "weight")


def emit_scores_csv(report: EvalReport, out_dir: Path) -> Path:
    path = out_dir / "scores.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("tracker",) + _SCORE_FIELDS)
        for tracker in sorted(report.trackers, key=lambda t: t.label):
            for score in tracker.scores:
                writer.writerow(
                    [tracker.label]
                    + [
                        getattr(score, f)
                        if isinstance(getattr(score, f), (str, int))
                        else (
                            ""
                            if getattr(score, f) is None
                            else repr(getattr(score, f))
                        )
                        for f in _SCORE_FIELDS
                    ]
                )
    return path


def emit_attributes_csv(report: EvalReport, out_dir: Path) -> Path:
    path = out_dir / "attributes.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["tracker", "attribute", "metric", "fpv", "tpv", "delta",
             "fpv_frames", "tpv_frames", "fpv_sequences", "tpv_sequences",
             "available"]
        )
        for tracker in sorted(report.trackers, key=lambda t: t.label):
            for row in tracker.attribute_rows:
                writer.writerow(
                    [
                        tracker.label,
                        row["attribute"],
                        row["metric"],
                        _cell(row.get("fpv")),
                        _cell(row.get("tpv")),
                        _cell(row.get("delta")),
                        row.get("fpv_frames", 0),
                        row.get("tpv_frames", 0),
                        row.get("fpv_sequences", 0),
                        row.get("tpv_sequences", 0),
                        int(row.get("available", True)),
                    ]
                )
    return path


def _cell(value) -> str:
    return "" if value is None else repr(value)


def _tracker_to_json(tracker: TrackerReport) -> dict:
    return {
        "label": tracker.label,
        "protocol": tracker.protocol,
        "scores": [asdict(s) for s in tracker.scores],
        "view_means": tracker.view_means,
        "view_means_unweighted": tracker.view_means_unweighted,
        "deltas": {m: asdict(d) for m, d in tracker.deltas.items()},
        "t_tests": {m: list(v) for m, v in tracker.t_tests.items()},
        "success_curves": {
            view: [list(taus), list(values)]
            for view, (taus, values) in tracker.success_curves.items()
        },
        # partial run records are in-memory only; they don't serialize
        "failures": [
            {"pair_id": f.pair_id, "view": f.view, "error": f.error}
            for f in tracker.failures
        ],
        "dropped_short_runs": tracker.dropped_short_runs,
        "attribute_rows": tracker.attribute_rows,
        "center_distance_rows": tracker.center_distance_rows,
    }


def _tracker_from_json(obj: dict) -> TrackerReport:
    return TrackerReport(
        label=obj["label"],
        protocol=obj["protocol"],
        scores=[SequenceScore(**s) for s in obj["scores"]],
        view_means=obj["view_means"],
        view_means_unweighted=obj["view_means_unweighted"],
        deltas={m: DeltaScore(**d) for m, d in obj["deltas"].items()},
        t_tests={m: tuple(v) for m, v in obj["t_tests"].items()},
        success_curves={
            view: (tuple(curve[0]), tuple(curve[1]))
            for view, curve in obj["success_curves"].items()
        },
        failures=[FailureRecord(**f) for f in obj["failures"]],
        dropped_short_runs=obj.get("dropped_short_runs", 0),
        attribute_rows=obj.get("attribute_rows", []),
        center_distance_rows=obj.get("center_distance_rows", []),
    )


def write_report(report: EvalReport, out_root: str | Path) -> Path:
    """Persist everything under ``<out_root>/<config-hash>/``."""
    run_dir = Path(out_root) / config_hash(report.config)
    run_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "version": report.version,
        "config": report.config,
        "thresholds": report.thresholds,
        "trackers": [_tracker_to_json(t) for t in report.trackers],
    }
    (run_dir / "report.json").write_text(
        json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8"
    )
    emit_scores_csv(report, run_dir)
    emit_tables(report, run_dir)
    emit_attributes_csv(report, run_dir)
    for metric in ("auc", "nps", "gsr"):
        points = []
        for tracker in report.trackers:
            fpv = tracker.view_means.get(FPV, {}).get(metric)
            tpv = tracker.view_means.get(TPV, {}).get(metric)
            if fpv is None or tpv is None:
                continue
            points.append(BiasPlotPoint(label=tracker.label, x=tpv, y=fpv))
        if points:
            emit_bias_plot(points, metric, run_dir)
    center_rows = [
        dict(row, tracker=tracker.label)
        for tracker in report.trackers
        for row in tracker.center_distance_rows
    ]
    if center_rows:
        emit_center_distance_report(center_rows, run_dir)
    return run_dir


def load_report(path: str | Path) -> EvalReport:
    """Read report.json and verify aggregates match the per-sequence scores."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    report = EvalReport(
        config=doc["config"],
        thresholds=doc["thresholds"],
        trackers=[_tracker_from_json(t) for t in doc["trackers"]],
        version=doc["version"],
    )
    for tracker in report.trackers:
        _check_consistency(tracker)
    return report


def _check_consistency(tracker: TrackerReport) -> None:
    for view, means in tracker.view_means.items():
        view_scores = [s for s in tracker.scores if s.view == view]
        for metric, stored in means.items():
            vals = [
                (s.value(metric), float(s.weight))
                for s in view_scores
                if s.value(metric) is not None
            ]
            recomputed = weighted_mean(vals)
            if recomputed != stored:
                raise ReportError(
                    f"{tracker.label}/{view}/{metric}: stored {stored!r} "
                    f"!= recomputed {recomputed!r}"
                )
    for metric, delta in tracker.deltas.items():
        by_pair: dict[str, dict[str, SequenceScore]] = {}
        for score in tracker.scores:
            by_pair.setdefault(score.pair_id, {})[score.view] = score
        rows = []
        for pid in sorted(by_pair):
            pair_scores = by_pair[pid]
            if FPV not in pair_scores or TPV not in pair_scores:
                continue
            fv = pair_scores[FPV].value(metric)
            tv = pair_scores[TPV].value(metric)
            if fv is None or tv is None:
                continue
            rows.append((fv, tv, float(pair_scores[FPV].weight)))
        recomputed = delta_sigma(rows, metric)
        if recomputed.delta != delta.delta:
            raise ReportError(
                f"{tracker.label}/{metric}: stored delta {delta.delta!r} "
                f"!= recomputed {recomputed.delta!r}"
            )

"""Command-line interface: evaluation runs, synthetic data, mock tracker."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import mock_tracker
from .attributes import (
    ATTRIBUTES,
    AttributeThresholds,
    AttributeUnavailable,
    attribute_filtered_scores,
    center_distance_tables,
    compute_pair_attributes,
    load_detections,
)
from .metrics import BOX, MASK
from .model import FPV, TPV, VIEWS, load_manifest
from .reports import (
    EvalReport,
    tracker_report_from_outcome,
    write_report,
)
from .runner import (
    LONG_TERM,
    SHORT_TERM,
    EvalOutcome,
    ReplayDriver,
    SubprocessDriver,
    _evaluation_units,
    run_series,
)
from .synth import (
    ScriptedDriver,
    ScriptedTracker,
    ShortTermScriptedDriver,
    generate_manifest,
    load_synth_specs,
)


def _build_driver(spec: str, repr_mode: str, timeout: float, manifest,
                  protocol: str):
    if spec.startswith("replay:"):
        return ReplayDriver(spec.split(":", 1)[1], output_repr=repr_mode)
    if spec.startswith("cmd:"):
        return SubprocessDriver(
            spec.split(":", 1)[1], output_repr=repr_mode, timeout=timeout
        )
    if spec.startswith("scripted:"):
        tracker = ScriptedTracker.parse(spec.split(":", 1)[1])
        if protocol == SHORT_TERM:
            return ShortTermScriptedDriver(tracker, manifest)
        return ScriptedDriver(tracker, manifest)
    raise SystemExit(
        f"unknown driver spec {spec!r} (expected replay:DIR, cmd:\"...\", "
        "or scripted:KIND)"
    )


def _breakdown_rows(manifest, outcome: EvalOutcome, repr_mode: str,
                    protocol: str, min_run_len: int,
                    thresholds: AttributeThresholds,
                    detections_dir: str | None, pixels: bool,
                    with_attributes: bool):
    """Attribute and center-distance restricted scores from run records."""
    units, _ = _evaluation_units(manifest, protocol, min_run_len)
    units_by_id = {u.id: u for u in units}
    series_entries = []
    attr_entries = []
    bin_entries = []
    for unit_id in sorted(units_by_id):
        unit = units_by_id[unit_id]
        series_by_view = {}
        for view in VIEWS:
            record = outcome.records.get((unit_id, view))
            if record is None:
                continue
            series_by_view[view] = run_series(
                unit, view, record.predictions, repr_mode
            )
        if not series_by_view:
            continue
        series_entries.append((unit_id, unit, series_by_view))
        bin_entries.append(center_distance_tables(unit))
    if with_attributes:
        detections = None
        for unit_id, unit, series_by_view in series_entries:
            if detections_dir is not None:
                detections = {}
                for view in VIEWS:
                    path = Path(detections_dir) / f"{unit.id}.{view}.jsonl"
                    if path.exists():
                        detections[view] = load_detections(path)
            tables = compute_pair_attributes(
                unit, thresholds, detections=detections, pixels=pixels
            )
            attr_entries.append((unit_id, series_by_view, tables))

    attribute_rows = []
    if with_attributes:
        for attribute in ATTRIBUTES:
            entries = [
                (
                    unit_id,
                    series_by_view,
                    {
                        view: set(tables[view].timestamps_with(attribute))
                        for view in VIEWS
                    },
                )
                for unit_id, series_by_view, tables in attr_entries
            ]
            unavailable = any(
                attribute in tables[view].unavailable
                for _, _, tables in attr_entries
                for view in VIEWS
            )
            if unavailable:
                attribute_rows.append(
                    {"attribute": attribute, "metric": "auc",
                     "available": False}
                )
                continue
            try:
                filtered = attribute_filtered_scores(entries, attribute)
            except AttributeUnavailable:
                attribute_rows.append(
                    {"attribute": attribute, "metric": "auc",
                     "available": False}
                )
                continue
            attribute_rows.append(
                {
                    "attribute": attribute,
                    "metric": filtered.metric,
                    "fpv": filtered.view_means.get(FPV),
                    "tpv": filtered.view_means.get(TPV),
                    "delta": filtered.delta,
                    "fpv_frames": int(filtered.view_weights.get(FPV, 0)),
                    "tpv_frames": int(filtered.view_weights.get(TPV, 0)),
                    "fpv_sequences": filtered.sequences_used.get(FPV, 0),
                    "tpv_sequences": filtered.sequences_used.get(TPV, 0),
                    "available": True,
                }
            )

    center_rows = []
    for bin_value in range(4):
        entries = []
        for (unit_id, _, series_by_view), bins in zip(series_entries, bin_entries):
            flagged = {
                view: {t for t, b in bins[view].items() if b == bin_value}
                for view in VIEWS
            }
            entries.append((unit_id, series_by_view, flagged))
        try:
            filtered = attribute_filtered_scores(entries, f"bin{bin_value}")
        except AttributeUnavailable:
            for view in VIEWS:
                center_rows.append(
                    {"view": view, "bin": bin_value, "value": None,
                     "weight": 0, "sequences": 0}
                )
            continue
        for view in VIEWS:
            center_rows.append(
                {
                    "view": view,
                    "bin": bin_value,
                    "value": filtered.view_means.get(view),
                    "weight": int(filtered.view_weights.get(view, 0)),
                    "sequences": filtered.sequences_used.get(view, 0),
                }
            )
    return attribute_rows, center_rows


def cmd_run(args) -> int:
    manifest = load_manifest(args.manifest)
    views = tuple(v.strip() for v in args.views.split(",") if v.strip())
    for view in views:
        if view not in VIEWS:
            raise SystemExit(f"unknown view {view!r}")
    driver = _build_driver(
        args.driver, args.repr, args.timeout, manifest, args.protocol
    )
    if args.detections and args.protocol != LONG_TERM:
        raise SystemExit("--detections requires --protocol long")
    from .runner import evaluate_dataset

    outcome = evaluate_dataset(
        manifest,
        driver,
        protocol=args.protocol,
        jobs=args.jobs,
        min_run_len=args.min_run_len,
        views=views,
        with_vos_metrics=not args.no_vos_metrics,
    )
    thresholds = AttributeThresholds()
    tracker = tracker_report_from_outcome(args.label, outcome)
    if set(views) == set(VIEWS):
        attribute_rows, center_rows = _breakdown_rows(
            manifest,
            outcome,
            args.repr,
            args.protocol,
            args.min_run_len,
            thresholds,
            args.detections,
            args.pixel_attributes,
            args.attributes,
        )
        tracker.attribute_rows = attribute_rows
        tracker.center_distance_rows = center_rows
    config = {
        "manifest": str(args.manifest),
        "driver": args.driver,
        "protocol": args.protocol,
        "views": list(views),
        "min_run_len": args.min_run_len,
        "repr": args.repr,
        "label": args.label,
        "attributes": bool(args.attributes),
        "pixel_attributes": bool(args.pixel_attributes),
        "detections": args.detections,
    }
    report = EvalReport(
        config=config, thresholds=thresholds.as_dict(), trackers=[tracker]
    )
    run_dir = write_report(report, args.out)
    print(f"report written to {run_dir}")
    for view in views:
        means = outcome.view_means.get(view, {})
        if means:
            line = ", ".join(f"{m}={v:.2f}" for m, v in sorted(means.items()))
            print(f"  {view}: {line}")
    for metric, delta in sorted(outcome.deltas.items()):
        print(f"  delta_{metric}: {delta.delta:+.2f}")
    if outcome.failures:
        print(f"  failures: {len(outcome.failures)}")
        for failure in outcome.failures:
            print(f"    {failure.pair_id}/{failure.view}: {failure.error}")
    if outcome.dropped_short_runs:
        print(f"  dropped short runs: {outcome.dropped_short_runs}")
    return 0 if not outcome.failures else 1


def cmd_synth(args) -> int:
    specs = load_synth_specs(args.spec)
    manifest_path = generate_manifest(specs, args.out, seed=args.seed)
    print(f"manifest written to {manifest_path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vista-eval",
        description="Score trackers on synchronized FPV/TPV video pairs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="evaluate a tracker on a dataset and emit a report")
    run_p.add_argument("--manifest", required=True)
    run_p.add_argument("--driver", required=True,
                       help='replay:DIR | cmd:"..." | scripted:KIND')
    run_p.add_argument("--protocol", choices=(LONG_TERM, SHORT_TERM),
                       default=LONG_TERM)
    run_p.add_argument("--views", default="fpv,tpv")
    run_p.add_argument("--out", required=True)
    run_p.add_argument("--jobs", type=int, default=1)
    run_p.add_argument("--min-run-len", type=int, default=2)
    run_p.add_argument("--label", default="tracker")
    run_p.add_argument("--repr", choices=(BOX, MASK), default=BOX)
    run_p.add_argument("--timeout", type=float, default=60.0)
    run_p.add_argument("--attributes", action="store_true",
                       help="emit attribute breakdowns")
    run_p.add_argument("--pixel-attributes", action="store_true",
                       help="also compute IV/MB from frame pixels")
    run_p.add_argument("--detections", default=None,
                       help="directory of <pair>.<view>.jsonl detection files")
    run_p.add_argument("--no-vos-metrics", action="store_true",
                       help="skip J/F/J&F computation")
    run_p.set_defaults(func=cmd_run)

    synth_p = sub.add_parser("synth", help="generate a synthetic dataset")
    synth_p.add_argument("--spec", required=True)
    synth_p.add_argument("--out", required=True)
    synth_p.add_argument("--seed", type=int, default=0)
    synth_p.set_defaults(func=cmd_synth)

    mock_p = sub.add_parser("mock-tracker",
                            help="serve a scripted tracker over stdin/stdout")
    mock_p.add_argument("--kind", required=True)
    mock_p.add_argument("--annotations-root", default=None)
    mock_p.set_defaults(
        func=lambda args: mock_tracker.serve(
            ScriptedTracker.parse(args.kind), args.annotations_root
        )
    )

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

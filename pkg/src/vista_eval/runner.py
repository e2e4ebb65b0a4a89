"""Synchronized one-pass evaluation (SOPE): drivers, the online loop, aggregation.

A tracker is initialized once with the first-frame ground truth and then
sees every frame of the 5 fps stream in order, separately per view of a
synchronized pair; predictions are recorded on the annotation grid (the
initialization frame is never scored) and there are no resets. Pairs are
evaluated independently per view, so results cannot leak across views.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .geometry import Box, BinaryMask, box_fill_mask, mask_to_box, rle_to_json
from .metrics import (
    BOX,
    METRIC_NAMES,
    DeltaScore,
    MetricError,
    SequenceScore,
    auc,
    boundary_f,
    delta_sigma,
    gsr,
    nps,
    overlap_series,
    paired_t_test,
    region_j,
    state_as_mask,
    success_curve,
    weighted_mean,
)
from .model import (
    ABSENT,
    DatasetManifest,
    FPV,
    SequencePair,
    State,
    TPV,
    Track,
    ViewSequence,
    VIEWS,
    is_absent,
    load_state_file,
    parse_state_line,
    prediction_track_from_entries,
    visibility_runs,
)

LONG_TERM = "long"
SHORT_TERM = "short"

DEFAULT_FRAME_TIMEOUT = 60.0


class DriverError(RuntimeError):
    """Tracker process crashed, timed out, or could not be launched."""


class ProtocolError(DriverError):
    """Tracker reply violated the wire grammar."""


@dataclass(frozen=True)
class RunRecord:
    pair_id: str
    view: str
    predictions: Track
    wall_time: float
    protocol: str = LONG_TERM


@dataclass(frozen=True)
class FailureRecord:
    pair_id: str
    view: str
    error: str
    partial_record: RunRecord | None = None


class TrackerSession(Protocol):
    def track(self, t: int, frame_path: str) -> State: ...

    def close(self) -> None: ...


class TrackerDriver(Protocol):
    output_repr: str

    def open_session(
        self, seq_id: str, view: str, init_frame: str, init_state: State
    ) -> TrackerSession: ...


def _convert_state(state: State, repr_kind: str, height: int, width: int) -> State:
    """Ground truth converted to the representation a tracker accepts."""
    if is_absent(state):
        return ABSENT
    if repr_kind == BOX:
        return state if isinstance(state, Box) else mask_to_box(state)
    if isinstance(state, BinaryMask):
        return state
    return box_fill_mask(state, height, width)


class ReplaySession:
    def __init__(self, track: Track):
        self._track = track

    def track(self, t: int, frame_path: str) -> State:
        return self._track.state_at(t)

    def close(self) -> None:
        pass


class ReplayDriver:
    """Serves predictions from ``<root>/<seq_id>.<view>.jsonl`` files."""

    def __init__(self, root: str | Path, output_repr: str = BOX):
        self.root = Path(root)
        self.output_repr = output_repr

    def open_session(self, seq_id, view, init_frame, init_state) -> ReplaySession:
        path = self.root / f"{seq_id}.{view}.jsonl"
        if not path.exists():
            raise DriverError(f"replay file missing: {path}")
        entries = load_state_file(path)
        # frame_count is irrelevant for a lookup table
        return ReplaySession(prediction_track_from_entries(entries, 0))


class _LineReader:
    """Background reader so replies can be awaited with a timeout."""

    def __init__(self, stream):
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(
            target=self._pump, args=(stream,), daemon=True
        )
        self._thread.start()

    def _pump(self, stream):
        try:
            for line in stream:
                self._queue.put(line)
        except Exception:
            pass
        self._queue.put(None)

    def readline(self, timeout: float) -> str | None:
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError


class SubprocessSession:
    """Harness side of the line-delimited JSON tracker protocol."""

    def __init__(
        self,
        command: str,
        seq_id: str,
        view: str,
        init_frame: str,
        init_state: State,
        repr_kind: str,
        timeout: float,
    ):
        self.timeout = timeout
        try:
            self.proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise DriverError(f"cannot launch tracker: {exc}") from exc
        self._reader = _LineReader(self.proc.stdout)
        init_msg = {"cmd": "init", "seq": seq_id, "frame": init_frame,
                    "repr": repr_kind}
        if isinstance(init_state, Box):
            init_msg["box"] = init_state.as_list()
        elif isinstance(init_state, BinaryMask):
            init_msg["rle"] = rle_to_json(init_state)
        else:
            self._kill()
            raise DriverError("cannot initialize a tracker with an absent state")
        reply = self._roundtrip(init_msg)
        if reply.get("status") != "ok":
            self._kill()
            raise ProtocolError(f"bad init reply: {reply!r}")

    def _send(self, msg: dict) -> None:
        try:
            self.proc.stdin.write(json.dumps(msg) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self._kill()
            raise DriverError(f"tracker pipe closed: {exc}") from exc

    def _roundtrip(self, msg: dict) -> dict:
        self._send(msg)
        try:
            line = self._reader.readline(self.timeout)
        except TimeoutError:
            self._kill()
            raise DriverError(
                f"tracker reply timed out after {self.timeout:.0f}s"
            )
        if line is None:
            self._kill()
            raise DriverError("tracker closed its output stream")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError:
            self._kill()
            raise ProtocolError(f"reply is not valid JSON: {line!r:.200}")
        if not isinstance(reply, dict):
            self._kill()
            raise ProtocolError(f"reply is not a JSON object: {line!r:.200}")
        return reply

    def track(self, t: int, frame_path: str) -> State:
        reply = self._roundtrip({"cmd": "track", "t": t, "frame": frame_path})
        if reply.get("t") != t:
            self._kill()
            raise ProtocolError(
                f"reply t={reply.get('t')!r} does not match request t={t}"
            )
        if reply.get("absent"):
            return ABSENT
        try:
            _, state = parse_state_line(reply)
        except ValueError as exc:
            self._kill()
            raise ProtocolError(f"bad prediction at t={t}: {exc}") from exc
        return state

    def close(self) -> None:
        if self.proc.poll() is not None:
            raise DriverError("tracker exited before the session ended")
        self._send({"cmd": "end"})
        try:
            code = self.proc.wait(timeout=self.timeout)
        except subprocess.TimeoutExpired:
            self._kill()
            raise DriverError("tracker did not exit after 'end'")
        if code != 0:
            raise DriverError(f"tracker exited with status {code}")

    def _kill(self) -> None:
        if self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait()


class SubprocessDriver:
    """Spawns one tracker process per (sequence, view) session."""

    def __init__(
        self,
        command: str,
        output_repr: str = BOX,
        timeout: float = DEFAULT_FRAME_TIMEOUT,
    ):
        self.command = command
        self.output_repr = output_repr
        self.timeout = timeout

    def open_session(self, seq_id, view, init_frame, init_state):
        return SubprocessSession(
            self.command,
            seq_id,
            view,
            init_frame,
            init_state,
            self.output_repr,
            self.timeout,
        )


def run_sope(
    pair: SequencePair, driver: TrackerDriver, view: str,
    protocol: str = LONG_TERM,
) -> RunRecord:
    """One-pass run of a tracker over one view of a synchronized pair."""
    vs = pair.view(view)
    gt = vs.annotations
    init_state = gt.state_at(0)
    if is_absent(init_state):
        raise DriverError(f"{pair.id}/{view}: no initial annotation")
    init_state = _convert_state(init_state, driver.output_repr, vs.height, vs.width)
    grid = set(gt.timestamps[1:])
    started = time.perf_counter()
    session = driver.open_session(pair.id, view, vs.frame_path(0), init_state)
    timestamps: list[int] = []
    states: list[State] = []

    def record() -> RunRecord:
        return RunRecord(
            pair_id=pair.id,
            view=view,
            predictions=Track(
                tuple(timestamps),
                tuple(states),
                vs.frame_count,
                gt.fps,
                gt.annotation_rate,
            ),
            wall_time=time.perf_counter() - started,
            protocol=protocol,
        )

    try:
        for t in range(1, vs.frame_count):
            state = session.track(t, vs.frame_path(t))
            if t in grid:
                timestamps.append(t)
                states.append(state)
        session.close()
    except Exception as exc:
        # predictions collected before the crash stay available to callers
        exc.partial_record = record()
        try:
            session.close()
        except Exception:
            pass
        raise
    return record()


def _subsequence_view(vs: ViewSequence, start: int, end: int) -> ViewSequence:
    track = vs.annotations
    length = end - start + 1
    kept = [
        (t - start, s)
        for t, s in zip(track.timestamps, track.states)
        if start <= t <= end
    ]
    sub_track = Track(
        tuple(t for t, _ in kept),
        tuple(s for _, s in kept),
        length,
        track.fps,
        track.annotation_rate,
    )
    return ViewSequence(
        view=vs.view,
        frames_locator=vs.frames_locator,
        width=vs.width,
        height=vs.height,
        annotations=sub_track,
        frame_offset=vs.frame_offset + start,
    )


def extract_short_term(pair: SequencePair, min_len: int = 2) -> list[SequencePair]:
    """One re-anchored sub-pair per visibility run of at least min_len annotations.

    Runs are shared across views by the synchronization constraint; each
    sub-pair starts at its run's first annotation, which becomes the new
    initialization frame.
    """
    runs = visibility_runs(pair.fpv.annotations)
    step = pair.fpv.annotations.grid_step
    sub_pairs = []
    for k, (start, end) in enumerate(runs):
        n_annotations = (end - start) // step + 1
        if n_annotations < min_len:
            continue
        sub_pairs.append(
            SequencePair(
                id=f"{pair.id}~st{k:03d}",
                fpv=_subsequence_view(pair.fpv, start, end),
                tpv=_subsequence_view(pair.tpv, start, end),
            )
        )
    return sub_pairs


def run_series(
    pair: SequencePair, view: str, predictions: Track, repr_mode: str = BOX
):
    """Overlap series for a run on the scoring grid (annotations minus t=0)."""
    vs = pair.view(view)
    return overlap_series(
        predictions,
        vs.annotations.without_initial(),
        mode=repr_mode,
        height=vs.height,
        width=vs.width,
    )


def score_run(
    pair: SequencePair,
    view: str,
    predictions: Track,
    repr_mode: str = BOX,
    with_vos_metrics: bool = True,
) -> SequenceScore:
    """All metrics for one run, scored on the annotation grid minus t=0."""
    vs = pair.view(view)
    gt_scoring = vs.annotations.without_initial()
    series = run_series(pair, view, predictions, repr_mode)
    auc_v = auc(series)
    nps_v = nps(predictions, gt_scoring)
    gsr_v = gsr(series)
    j_v = f_v = jf_v = None
    if with_vos_metrics:
        gt_masks = []
        pred_masks = []
        for t, g in zip(gt_scoring.timestamps, gt_scoring.states):
            if is_absent(g):
                continue
            gt_masks.append(state_as_mask(g, vs.height, vs.width))
            pred_masks.append(
                state_as_mask(predictions.state_at(t), vs.height, vs.width)
            )
        j_v = region_j(pred_masks, gt_masks)
        f_v = boundary_f(pred_masks, gt_masks)
        jf_v = (j_v + f_v) / 2.0
    return SequenceScore(
        pair_id=pair.id,
        view=view,
        auc=auc_v,
        nps=nps_v,
        gsr=gsr_v,
        j=j_v,
        f=f_v,
        jf=jf_v,
        weight=vs.annotations.weight,
    )


@dataclass
class EvalOutcome:
    """Scores, aggregates, and bookkeeping for one tracker over a dataset."""

    protocol: str
    scores: dict[tuple[str, str], SequenceScore] = field(default_factory=dict)
    records: dict[tuple[str, str], RunRecord] = field(default_factory=dict)
    partial_records: dict[tuple[str, str], RunRecord] = field(default_factory=dict)
    failures: list[FailureRecord] = field(default_factory=list)
    dropped_short_runs: int = 0
    view_means: dict[str, dict[str, float]] = field(default_factory=dict)
    view_means_unweighted: dict[str, dict[str, float]] = field(default_factory=dict)
    deltas: dict[str, DeltaScore] = field(default_factory=dict)
    t_tests: dict[str, tuple[float, float]] = field(default_factory=dict)
    success_curves: dict[str, tuple[tuple[float, ...], tuple[float, ...]]] = field(
        default_factory=dict
    )

    def pair_ids(self) -> list[str]:
        return sorted({pid for pid, _ in self.scores})

    def per_pair_values(self, metric: str) -> list[tuple[float, float, float]]:
        """(fpv, tpv, weight) for pairs scored in both views, sorted by id."""
        rows = []
        for pid in self.pair_ids():
            f = self.scores.get((pid, FPV))
            t = self.scores.get((pid, TPV))
            if f is None or t is None:
                continue
            fv, tv = f.value(metric), t.value(metric)
            if fv is None or tv is None:
                continue
            rows.append((fv, tv, float(f.weight)))
        return rows


def _evaluation_units(
    manifest: DatasetManifest, protocol: str, min_run_len: int
) -> tuple[list[SequencePair], int]:
    if protocol == LONG_TERM:
        return list(manifest.pairs), 0
    units = []
    dropped = 0
    for pair in manifest.pairs:
        subs = extract_short_term(pair, min_len=min_run_len)
        dropped += len(visibility_runs(pair.fpv.annotations)) - len(subs)
        units.extend(subs)
    return units, dropped


def evaluate_dataset(
    manifest: DatasetManifest,
    driver: TrackerDriver,
    protocol: str = LONG_TERM,
    jobs: int = 1,
    min_run_len: int = 2,
    views: tuple[str, ...] = VIEWS,
    with_vos_metrics: bool = True,
) -> EvalOutcome:
    """Evaluate every pair and aggregate annotation-length-weighted scores.

    Per-pair failures are isolated and reported, never silently dropped;
    results are deterministic and independent of the parallelism degree.
    """
    if protocol not in (LONG_TERM, SHORT_TERM):
        raise ValueError(f"unknown protocol {protocol!r}")
    units, dropped = _evaluation_units(manifest, protocol, min_run_len)
    outcome = EvalOutcome(protocol=protocol)
    outcome.dropped_short_runs = dropped

    def eval_view(unit: SequencePair, view: str):
        record = run_sope(unit, driver, view, protocol=protocol)
        score = score_run(
            unit, view, record.predictions, driver.output_repr, with_vos_metrics
        )
        _, curve = success_curve(
            run_series(unit, view, record.predictions, driver.output_repr)
        )
        return record, score, curve

    tasks = [(unit, view) for unit in units for view in views]
    results: dict[tuple[str, str], tuple] = {}
    if jobs <= 1:
        for unit, view in tasks:
            results[(unit.id, view)] = _guarded(eval_view, unit, view)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {
                (unit.id, view): pool.submit(_guarded, eval_view, unit, view)
                for unit, view in tasks
            }
            results = {key: fut.result() for key, fut in futures.items()}

    curves: dict[tuple[str, str], tuple[float, ...]] = {}
    for key in sorted(results):
        value = results[key]
        if isinstance(value, FailureRecord):
            outcome.failures.append(value)
            partial = getattr(value, "partial_record", None)
            if partial is not None:
                outcome.partial_records[key] = partial
        else:
            record, score, curve = value
            outcome.records[key] = record
            outcome.scores[key] = score
            curves[key] = curve

    _aggregate(outcome, views, curves)
    return outcome


def _guarded(fn, unit, view):
    try:
        return fn(unit, view)
    except Exception as exc:
        return FailureRecord(
            unit.id,
            view,
            f"{type(exc).__name__}: {exc}",
            partial_record=getattr(exc, "partial_record", None),
        )


def _aggregate(
    outcome: EvalOutcome,
    views: tuple[str, ...],
    curves: dict[tuple[str, str], tuple[float, ...]] | None = None,
) -> None:
    taus = tuple(i / 50.0 for i in range(51))
    for view in views:
        keys = [key for key in sorted(outcome.scores) if key[1] == view]
        view_scores = [outcome.scores[key] for key in keys]
        if not view_scores:
            continue
        weighted: dict[str, float] = {}
        unweighted: dict[str, float] = {}
        for metric in METRIC_NAMES:
            vals = [
                (s.value(metric), float(s.weight))
                for s in view_scores
                if s.value(metric) is not None
            ]
            if not vals:
                continue
            weighted[metric] = weighted_mean(vals)
            unweighted[metric] = weighted_mean([(v, 1.0) for v, _ in vals])
        outcome.view_means[view] = weighted
        outcome.view_means_unweighted[view] = unweighted
        if curves:
            total_w = sum(float(outcome.scores[k].weight) for k in keys)
            mean_curve = tuple(
                sum(
                    curves[k][i] * float(outcome.scores[k].weight)
                    for k in keys
                )
                / total_w
                for i in range(51)
            )
            outcome.success_curves[view] = (taus, mean_curve)

    if set(views) == set(VIEWS):
        for metric in METRIC_NAMES:
            rows = outcome.per_pair_values(metric)
            if rows:
                outcome.deltas[metric] = delta_sigma(rows, metric)
        auc_rows = outcome.per_pair_values("auc")
        if len(auc_rows) >= 2:
            try:
                outcome.t_tests["auc"] = paired_t_test(
                    [f for f, _, _ in auc_rows], [t for _, t, _ in auc_rows]
                )
            except MetricError:
                pass

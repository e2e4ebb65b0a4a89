"""Synthetic synchronized pairs and scripted trackers with known scores.

The generator produces pairs whose geometry is fully scripted, so every
metric has a closed-form expected value; scripted trackers are exposed both
as in-process drivers and through the subprocess wire protocol, making the
whole pipeline oracle-testable at desk scale.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import Box
from .metrics import BOX, OverlapSeries, auc, gsr
from .model import (
    ABSENT,
    DatasetManifest,
    FPV,
    SequencePair,
    State,
    TPV,
    Track,
    ViewSequence,
    is_absent,
    save_manifest,
)


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """Parametric box path: static or linear drift from a start box."""

    box0: tuple[float, float, float, float]
    vx: float = 0.0
    vy: float = 0.0

    def box_at(self, t: int) -> Box:
        x, y, w, h = self.box0
        return Box(x + self.vx * t, y + self.vy * t, w, h)


@dataclass(frozen=True)
class SynthViewSpec:
    width: int
    height: int
    trajectory: Trajectory
    target_color: tuple[int, int, int] = (200, 40, 40)
    background_color: tuple[int, int, int] = (16, 120, 16)


@dataclass(frozen=True)
class SynthSpec:
    pair_id: str
    frame_count: int
    fpv: SynthViewSpec
    tpv: SynthViewSpec
    fps: float = 5.0
    annotation_rate: float = 1.0
    # annotation-grid step indices (inclusive ranges) where the target is absent
    gaps: tuple[tuple[int, int], ...] = ()
    render: bool = False
    clamp: bool = True

    @property
    def grid_step(self) -> int:
        return int(round(self.fps / self.annotation_rate))


def _absent_steps(spec: SynthSpec) -> set[int]:
    steps = set()
    for start, end in spec.gaps:
        steps.update(range(start, end + 1))
    return steps


def _view_track(spec: SynthSpec, view_spec: SynthViewSpec) -> Track:
    step = spec.grid_step
    absent = _absent_steps(spec)
    if 0 in absent:
        raise SynthError("gap schedule must not cover the initialization step")
    timestamps = tuple(range(0, spec.frame_count, step))
    states: list[State] = []
    for idx, t in enumerate(timestamps):
        if idx in absent:
            states.append(ABSENT)
            continue
        box = view_spec.trajectory.box_at(t)
        clamped = _clamp_box(box, view_spec.width, view_spec.height)
        if not spec.clamp and clamped != box:
            raise SynthError(
                f"trajectory exits {view_spec.width}x{view_spec.height} frame "
                f"at t={t} with clamping disabled"
            )
        states.append(clamped)
    return Track(timestamps, tuple(states), spec.frame_count, spec.fps,
                 spec.annotation_rate)


def _clamp_box(box: Box, width: int, height: int) -> Box:
    x0 = min(max(box.x, 0.0), float(width))
    y0 = min(max(box.y, 0.0), float(height))
    x1 = min(max(box.x + box.w, 0.0), float(width))
    y1 = min(max(box.y + box.h, 0.0), float(height))
    return Box(x0, y0, x1 - x0, y1 - y0)


def generate_pair(
    spec: SynthSpec, seed: int = 0, out_dir: str | Path | None = None
) -> SequencePair:
    """Deterministic synthetic pair; renders frame images when requested."""
    del seed  # geometry is fully scripted; the seed exists for suite-level APIs
    views = {}
    for name, view_spec in ((FPV, spec.fpv), (TPV, spec.tpv)):
        track = _view_track(spec, view_spec)
        base = (
            Path(out_dir) / "frames" / spec.pair_id / name
            if out_dir is not None
            else Path("<unrendered>") / spec.pair_id / name
        )
        # lossless frames: printf-style locator resolving to PNG files
        views[name] = ViewSequence(
            view=name,
            frames_locator=str(base / "%06d.png"),
            width=view_spec.width,
            height=view_spec.height,
            annotations=track,
        )
        if spec.render and out_dir is not None:
            _render_view(spec, view_spec, views[name])
    return SequencePair(id=spec.pair_id, fpv=views[FPV], tpv=views[TPV])


def _render_view(spec: SynthSpec, view_spec: SynthViewSpec, vs: ViewSequence) -> None:
    from PIL import Image, ImageDraw

    directory = Path(vs.frame_path(0)).parent
    directory.mkdir(parents=True, exist_ok=True)
    absent_ts = {
        t
        for t, s in zip(vs.annotations.timestamps, vs.annotations.states)
        if is_absent(s)
    }
    for t in range(spec.frame_count):
        img = Image.new("RGB", (view_spec.width, view_spec.height),
                        view_spec.background_color)
        if t not in absent_ts:
            box = _clamp_box(
                view_spec.trajectory.box_at(t), view_spec.width, view_spec.height
            )
            if box.w >= 1 and box.h >= 1:
                draw = ImageDraw.Draw(img)
                # rectangle() is corner-inclusive; match box_fill_mask pixels
                c0 = int(math.floor(box.x + 0.5))
                r0 = int(math.floor(box.y + 0.5))
                c1 = int(math.floor(box.x + box.w + 0.5)) - 1
                r1 = int(math.floor(box.y + box.h + 0.5)) - 1
                draw.rectangle([c0, r0, c1, r1], fill=view_spec.target_color)
        img.save(Path(vs.frame_path(t)))


def generate_manifest(
    specs: list[SynthSpec], out_dir: str | Path, split: str = "test",
    seed: int = 0,
) -> Path:
    """Materialize pairs (annotations + optional frames) and write a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = [generate_pair(spec, seed=seed, out_dir=out) for spec in specs]
    return save_manifest(DatasetManifest(tuple(pairs), split=split), out)


def spec_from_json(obj: dict) -> SynthSpec:
    def view(v: dict) -> SynthViewSpec:
        traj = v["trajectory"]
        return SynthViewSpec(
            width=int(v["width"]),
            height=int(v["height"]),
            trajectory=Trajectory(
                box0=tuple(float(c) for c in traj["box0"]),
                vx=float(traj.get("vx", 0.0)),
                vy=float(traj.get("vy", 0.0)),
            ),
            target_color=tuple(v.get("target_color", (200, 40, 40))),
            background_color=tuple(v.get("background_color", (16, 120, 16))),
        )

    return SynthSpec(
        pair_id=obj["id"],
        frame_count=int(obj["frame_count"]),
        fpv=view(obj["fpv"]),
        tpv=view(obj["tpv"]),
        fps=float(obj.get("fps", 5)),
        annotation_rate=float(obj.get("annotation_rate", 1)),
        gaps=tuple((int(a), int(b)) for a, b in obj.get("gaps", [])),
        render=bool(obj.get("render", False)),
        clamp=bool(obj.get("clamp", True)),
    )


def load_synth_specs(path: str | Path) -> list[SynthSpec]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    entries = doc["pairs"] if isinstance(doc, dict) else doc
    return [spec_from_json(entry) for entry in entries]


# ---------------------------------------------------------------------------
# Scripted trackers


PERFECT = "perfect"
ECHO_INIT = "echo_init"
FIXED_OFFSET = "fixed_offset"
LOSE_AFTER = "lose_after"
VIEW_BIASED = "view_biased"


@dataclass(frozen=True)
class ScriptedTracker:
    """Deterministic tracker with predictions computable in closed form."""

    kind: str
    dx: float = 0.0
    dy: float = 0.0
    lose_after: int = 0
    overlaps: dict = field(default_factory=dict)  # view -> target overlap

    @classmethod
    def parse(cls, text: str) -> "ScriptedTracker":
        """Parse CLI forms like ``perfect``, ``offset:3,4`` or ``lose_after:5``."""
        if text in (PERFECT, ECHO_INIT):
            return cls(kind=text)
        if text.startswith("offset:"):
            dx, dy = (float(v) for v in text.split(":", 1)[1].split(","))
            return cls(kind=FIXED_OFFSET, dx=dx, dy=dy)
        if text.startswith("lose_after:"):
            return cls(kind=LOSE_AFTER, lose_after=int(text.split(":", 1)[1]))
        if text.startswith("view_biased:"):
            f, t = (float(v) for v in text.split(":", 1)[1].split(","))
            return cls(kind=VIEW_BIASED, overlaps={FPV: f, TPV: t})
        raise SynthError(f"unknown scripted tracker {text!r}")


def scripted_prediction(
    tracker: ScriptedTracker,
    gt: Track,
    view: str,
    t: int,
    init_state: State,
    scored_index: int,
) -> State:
    """Prediction of a scripted tracker at one annotated timestamp.

    ``scored_index`` counts previously scored visible-ground-truth frames
    (used by the lose_after schedule).
    """
    gt_state = gt.state_at(t)
    kind = tracker.kind
    if kind == ECHO_INIT:
        return init_state
    if is_absent(gt_state):
        return ABSENT
    box = gt_state if isinstance(gt_state, Box) else None
    if box is None:
        from .geometry import mask_to_box

        box = mask_to_box(gt_state)
    if kind == PERFECT:
        return gt_state
    if kind == FIXED_OFFSET:
        return Box(box.x + tracker.dx, box.y + tracker.dy, box.w, box.h)
    if kind == LOSE_AFTER:
        return gt_state if scored_index < tracker.lose_after else ABSENT
    if kind == VIEW_BIASED:
        o = tracker.overlaps[view]
        return Box(box.x, box.y, box.w * o, box.h)
    raise SynthError(f"unknown scripted tracker kind {tracker.kind!r}")


class ScriptedSession:
    def __init__(self, tracker: ScriptedTracker, gt: Track, view: str,
                 init_state: State):
        self.tracker = tracker
        self.gt = gt
        self.view = view
        self.init_state = init_state
        self.scored = 0

    def track(self, t: int, frame_path: str) -> State:
        if not self.gt.has_timestamp(t):
            return ABSENT  # off-grid frames are never scored
        state = scripted_prediction(
            self.tracker, self.gt, self.view, t, self.init_state, self.scored
        )
        if not is_absent(self.gt.state_at(t)):
            self.scored += 1
        return state

    def close(self) -> None:
        pass


class ScriptedDriver:
    """In-process driver for scripted trackers (needs the manifest for GT)."""

    output_repr = BOX

    def __init__(self, tracker: ScriptedTracker, manifest: DatasetManifest):
        self.tracker = tracker
        self._pairs = {p.id: p for p in manifest.pairs}

    def register(self, pair: SequencePair) -> None:
        self._pairs[pair.id] = pair

    def open_session(self, seq_id, view, init_frame, init_state):
        pair = self._pairs.get(seq_id)
        if pair is None:
            raise SynthError(f"scripted driver has no ground truth for {seq_id!r}")
        return ScriptedSession(
            self.tracker, pair.view(view).annotations, view, init_state
        )


class ShortTermScriptedDriver(ScriptedDriver):
    """Scripted driver that also resolves short-term sub-pair ids.

    Registered with min_len=1 so ids work for any evaluation min_run_len
    (run indices are stable across min_len choices).
    """

    def __init__(self, tracker: ScriptedTracker, manifest: DatasetManifest):
        super().__init__(tracker, manifest)
        from .runner import extract_short_term

        for pair in list(self._pairs.values()):
            for sub in extract_short_term(pair, min_len=1):
                self._pairs[sub.id] = sub


# ---------------------------------------------------------------------------
# Closed-form expected scores


@dataclass(frozen=True)
class ExpectedScores:
    auc: float
    nps: float
    gsr: float


def _scoring_layout(spec: SynthSpec) -> list[bool]:
    """Visibility of each scoring-grid step (annotation steps minus step 0)."""
    absent = _absent_steps(spec)
    n_steps = len(range(0, spec.frame_count, spec.grid_step))
    return [idx not in absent for idx in range(1, n_steps)]


def expected_scores(spec: SynthSpec, tracker: ScriptedTracker, view: str) -> ExpectedScores:
    """Analytic AUC/NPS/GSR for scripted trackers with closed-form overlaps."""
    view_spec = spec.fpv if view == FPV else spec.tpv
    visible = [v for v in _scoring_layout(spec) if v]
    n = len(visible)
    if n == 0:
        raise SynthError("suite has no scorable annotations")
    kind = tracker.kind
    if kind == PERFECT:
        overlaps = [1.0] * n
        distances = [0.0] * n
    elif kind == LOSE_AFTER:
        k = min(tracker.lose_after, n)
        overlaps = [1.0] * k + [0.0] * (n - k)
        distances = [0.0] * k + [math.inf] * (n - k)
    elif kind == VIEW_BIASED:
        o = tracker.overlaps[view]
        overlaps = [o] * n
        distances = [(1.0 - o) / 2.0] * n
    elif kind == FIXED_OFFSET:
        _, _, w, h = view_spec.trajectory.box0
        ix = max(0.0, w - abs(tracker.dx))
        iy = max(0.0, h - abs(tracker.dy))
        inter = ix * iy
        o = inter / (2.0 * w * h - inter) if inter > 0 else 0.0
        d = math.hypot(tracker.dx / w, tracker.dy / h)
        overlaps = [o] * n
        distances = [d] * n
    else:
        raise SynthError(f"no closed form for scripted tracker {kind!r}")

    series = OverlapSeries(tuple(range(n)), tuple(overlaps))
    nps_val = (
        100.0
        * sum(max(0.0, 0.5 - d) for d in distances if not math.isinf(d))
        / (0.5 * n)
    )
    return ExpectedScores(auc=auc(series), nps=nps_val, gsr=gsr(series))


def random_suite(
    n_pairs: int,
    seed: int,
    frame_count_range: tuple[int, int] = (40, 120),
    frame_size: int = 96,
) -> list[SynthSpec]:
    """Varied, seed-deterministic specs with integer-friendly geometry."""
    rng = random.Random(seed)
    specs = []
    for i in range(n_pairs):
        frame_count = rng.randrange(*frame_count_range)
        n_steps = (frame_count - 1) // 5 + 1
        gaps: tuple[tuple[int, int], ...] = ()
        if n_steps >= 6 and rng.random() < 0.5:
            gap_start = rng.randrange(2, n_steps - 2)
            gap_end = min(n_steps - 2, gap_start + rng.randrange(0, 2))
            gaps = ((gap_start, gap_end),)
        def mk_view():
            w = rng.choice((20, 30, 40))
            h = rng.choice((20, 30, 40))
            x0 = rng.randrange(5, 25)
            y0 = rng.randrange(5, 25)
            vx = rng.choice((0.0, 0.1, 0.2))
            return SynthViewSpec(
                width=frame_size,
                height=frame_size,
                trajectory=Trajectory((float(x0), float(y0), float(w), float(h)), vx=vx),
            )

        specs.append(
            SynthSpec(
                pair_id=f"synth-{i:03d}",
                frame_count=frame_count,
                fpv=mk_view(),
                tpv=mk_view(),
                gaps=gaps,
            )
        )
    return specs

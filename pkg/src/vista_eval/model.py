"""Dataset manifest, annotation/prediction tracks, and synchronization checks.

Target states live on an annotation grid (one annotation per second of a
5 fps video by default); a grid timestamp missing from an annotation file
means the target is absent there. Scoring always samples this grid.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Union

from .geometry import Box, BinaryMask, RleError, rle_from_json, rle_to_json


class ManifestError(ValueError):
    """Malformed manifest or annotation file, or violated pair constraint."""


class _Absent:
    """Explicit target-absence marker (singleton ``ABSENT``)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ABSENT"


ABSENT = _Absent()

State = Union[Box, BinaryMask, _Absent]

FPV = "fpv"
TPV = "tpv"
VIEWS = (FPV, TPV)


def is_absent(state: State) -> bool:
    return state is ABSENT or isinstance(state, _Absent)


@dataclass(frozen=True)
class Track:
    """Timestamp-indexed target states over the annotation grid.

    ``timestamps`` are strictly increasing frame indices; ``states`` holds
    one entry per timestamp and may contain ``ABSENT``.
    """

    timestamps: tuple[int, ...]
    states: tuple[State, ...]
    frame_count: int
    fps: float = 5.0
    annotation_rate: float = 1.0

    def __post_init__(self):
        if len(self.timestamps) != len(self.states):
            raise ValueError("timestamps/states length mismatch")
        for prev, cur in zip(self.timestamps, self.timestamps[1:]):
            if cur <= prev:
                raise ValueError("timestamps must be strictly increasing")

    @property
    def grid_step(self) -> int:
        """Frames between consecutive annotations (5 fps at 1/s -> 5)."""
        step = self.fps / self.annotation_rate
        if step <= 0 or abs(step - round(step)) > 1e-9:
            raise ValueError(
                f"fps/annotation_rate must be a positive integer, got {step}"
            )
        return int(round(step))

    @property
    def weight(self) -> int:
        """Annotation weight: number of non-absent states."""
        return sum(1 for s in self.states if not is_absent(s))

    def state_at(self, t: int) -> State:
        idx = self._index().get(t)
        return ABSENT if idx is None else self.states[idx]

    def has_timestamp(self, t: int) -> bool:
        return t in self._index()

    def _index(self) -> dict[int, int]:
        cached = getattr(self, "_ts_index", None)
        if cached is None:
            cached = {t: i for i, t in enumerate(self.timestamps)}
            object.__setattr__(self, "_ts_index", cached)
        return cached

    def non_absent_timestamps(self) -> tuple[int, ...]:
        return tuple(
            t for t, s in zip(self.timestamps, self.states) if not is_absent(s)
        )

    def without_initial(self) -> "Track":
        """Drop the first timestamp (initialization frame excluded from scoring)."""
        return replace(
            self, timestamps=self.timestamps[1:], states=self.states[1:]
        )

    def restricted(self, timestamps: Iterable[int]) -> "Track":
        keep = set(timestamps)
        pairs = [
            (t, s) for t, s in zip(self.timestamps, self.states) if t in keep
        ]
        return replace(
            self,
            timestamps=tuple(t for t, _ in pairs),
            states=tuple(s for _, s in pairs),
        )


AnnotationTrack = Track
PredictionTrack = Track


def visibility_runs(track: Track) -> list[tuple[int, int]]:
    """Maximal runs of grid-adjacent timestamps with a visible target.

    Returned as ``(start_ts, end_ts)`` frame indices, disjoint and ordered.
    Adjacency is one annotation-grid step, not one raw frame.
    """
    step = track.grid_step
    runs: list[tuple[int, int]] = []
    start = prev = None
    for t in track.non_absent_timestamps():
        if start is None:
            start = prev = t
        elif t - prev == step:
            prev = t
        else:
            runs.append((start, prev))
            start = prev = t
    if start is not None:
        runs.append((start, prev))
    return runs


@dataclass(frozen=True)
class ViewSequence:
    """One view of a pair: frame locator, dimensions, and its annotations."""

    view: str
    frames_locator: str
    width: int
    height: int
    annotations: Track
    frame_offset: int = 0  # nonzero for re-anchored short-term subsequences

    def frame_path(self, t: int) -> str:
        raw = t + self.frame_offset
        if "%" in self.frames_locator:
            return self.frames_locator % raw
        return os.path.join(self.frames_locator, f"{raw:06d}.jpg")

    @property
    def frame_count(self) -> int:
        return self.annotations.frame_count


@dataclass(frozen=True)
class SequencePair:
    """A synchronized FPV/TPV annotated video pair."""

    id: str
    fpv: ViewSequence
    tpv: ViewSequence

    def view(self, name: str) -> ViewSequence:
        if name == FPV:
            return self.fpv
        if name == TPV:
            return self.tpv
        raise KeyError(f"unknown view {name!r}")


@dataclass(frozen=True)
class DatasetManifest:
    pairs: tuple[SequencePair, ...]
    split: str = "test"

    def __len__(self) -> int:
        return len(self.pairs)


def validate_pair(pair: SequencePair) -> list[str]:
    """Check the synchronization constraints; returns violations (empty = valid)."""
    violations: list[str] = []
    fpv, tpv = pair.fpv, pair.tpv
    if fpv.frame_count != tpv.frame_count:
        violations.append(
            f"length mismatch: fpv T={fpv.frame_count}, tpv T={tpv.frame_count}"
        )
    fpv_set = set(fpv.annotations.non_absent_timestamps())
    tpv_set = set(tpv.annotations.non_absent_timestamps())
    if fpv_set != tpv_set:
        violations.append(
            "annotation sets differ: non-absent timestamps are not aligned "
            f"across views ({len(fpv_set)} fpv vs {len(tpv_set)} tpv)"
        )
    for vs in (fpv, tpv):
        if is_absent(vs.annotations.state_at(0)):
            violations.append(f"initial annotation missing in {vs.view}")
        violations.extend(_geometry_violations(vs))
    return violations


def _geometry_violations(vs: ViewSequence) -> list[str]:
    out = []
    for t, state in zip(vs.annotations.timestamps, vs.annotations.states):
        if isinstance(state, Box):
            if state.w < 0 or state.h < 0:
                out.append(f"{vs.view} t={t}: negative box size")
            elif (
                state.x + state.w <= 0
                or state.y + state.h <= 0
                or state.x >= vs.width
                or state.y >= vs.height
            ):
                out.append(f"{vs.view} t={t}: box outside frame bounds")
        elif isinstance(state, BinaryMask):
            if (state.height, state.width) != (vs.height, vs.width):
                out.append(
                    f"{vs.view} t={t}: mask dimensions "
                    f"{state.height}x{state.width} mismatch frame "
                    f"{vs.height}x{vs.width}"
                )
    return out


def parse_state_line(obj: dict) -> tuple[int, State]:
    """Parse one annotation/prediction JSONL record into (t, state)."""
    try:
        t = int(obj["t"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"record missing integer 't': {obj!r}") from exc
    has_box = "box" in obj
    has_rle = "rle" in obj
    if has_box and has_rle:
        raise ManifestError(f"t={t}: record carries both box and rle")
    if has_box:
        vals = obj["box"]
        if not isinstance(vals, (list, tuple)) or len(vals) != 4:
            raise ManifestError(f"t={t}: box must be [x, y, w, h]")
        return t, Box(*(float(v) for v in vals))
    if has_rle:
        return t, rle_from_json(obj["rle"])
    if obj.get("absent", True) is False:
        raise ManifestError(f"t={t}: absent record must not say absent=false")
    return t, ABSENT


def state_to_json(state: State) -> dict:
    """JSON fields for a state (merged into a record alongside 't')."""
    if isinstance(state, Box):
        return {"box": [state.x, state.y, state.w, state.h]}
    if isinstance(state, BinaryMask):
        return {"rle": rle_to_json(state)}
    return {}


def load_state_file(path: str | Path) -> list[tuple[int, State]]:
    """Read a JSON Lines state file, enforcing sorted, unique timestamps."""
    entries: list[tuple[int, State]] = []
    seen: set[int] = set()
    last_t = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON") from exc
            try:
                t, state = parse_state_line(obj)
            except (ManifestError, RleError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
            if t in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate t={t}")
            if last_t is not None and t < last_t:
                raise ManifestError(f"{path}:{lineno}: timestamps not sorted")
            seen.add(t)
            last_t = t
            entries.append((t, state))
    return entries


def annotation_track_from_entries(
    entries: list[tuple[int, State]],
    frame_count: int,
    fps: float,
    annotation_rate: float,
    source: str = "<entries>",
) -> Track:
    """Materialize the full annotation grid; unlisted grid points are absent."""
    probe = Track((), (), frame_count, fps, annotation_rate)
    step = probe.grid_step
    by_t = {}
    for t, state in entries:
        if t < 0 or t >= frame_count:
            raise ManifestError(
                f"{source}: t={t} outside video of {frame_count} frames"
            )
        if t % step != 0:
            raise ManifestError(
                f"{source}: t={t} off the annotation grid (step {step})"
            )
        by_t[t] = state
    grid = tuple(range(0, frame_count, step))
    states = tuple(by_t.get(t, ABSENT) for t in grid)
    return Track(grid, states, frame_count, fps, annotation_rate)


def prediction_track_from_entries(
    entries: list[tuple[int, State]], frame_count: int, fps: float = 5.0,
    annotation_rate: float = 1.0,
) -> Track:
    """Prediction tracks keep only listed timestamps; lookups default to absent."""
    return Track(
        tuple(t for t, _ in entries),
        tuple(s for _, s in entries),
        frame_count,
        fps,
        annotation_rate,
    )


def _count_frames(frames_locator: str, base: Path) -> int:
    directory = Path(frames_locator)
    if not directory.is_absolute():
        directory = base / directory
    if "%" in str(directory):
        directory = directory.parent
    if not directory.is_dir():
        raise ManifestError(
            f"frame_count not given and frames directory {directory} missing"
        )
    return sum(1 for p in directory.iterdir() if p.is_file())


def _load_view(name: str, cfg: dict, base: Path, pair_id: str) -> ViewSequence:
    for key in ("frames", "width", "height", "annotations"):
        if key not in cfg:
            raise ManifestError(f"pair {pair_id}: {name} view missing '{key}'")
    fps = float(cfg.get("fps", 5))
    rate = float(cfg.get("annotation_rate", 1))
    frames = cfg["frames"]
    frame_count = cfg.get("frame_count")
    if frame_count is None:
        frame_count = _count_frames(frames, base)
    ann_path = Path(cfg["annotations"])
    if not ann_path.is_absolute():
        ann_path = base / ann_path
    entries = load_state_file(ann_path)
    track = annotation_track_from_entries(
        entries, int(frame_count), fps, rate, source=str(ann_path)
    )
    locator = frames
    if not Path(frames).is_absolute():
        locator = str(base / frames)
    return ViewSequence(
        view=name,
        frames_locator=locator,
        width=int(cfg["width"]),
        height=int(cfg["height"]),
        annotations=track,
    )


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a dataset manifest (annotation files read eagerly)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON") from exc
    if not isinstance(doc, dict) or "pairs" not in doc:
        raise ManifestError(f"{path}: manifest must be an object with 'pairs'")
    base = path.parent
    pairs = []
    ids = set()
    for entry in doc["pairs"]:
        pair_id = entry.get("id")
        if not pair_id:
            raise ManifestError(f"{path}: pair without id")
        if pair_id in ids:
            raise ManifestError(f"{path}: duplicate pair id {pair_id!r}")
        ids.add(pair_id)
        pair = SequencePair(
            id=pair_id,
            fpv=_load_view(FPV, entry.get(FPV, {}), base, pair_id),
            tpv=_load_view(TPV, entry.get(TPV, {}), base, pair_id),
        )
        violations = validate_pair(pair)
        if violations:
            raise ManifestError(
                f"pair {pair_id}: " + "; ".join(violations)
            )
        pairs.append(pair)
    return DatasetManifest(pairs=tuple(pairs), split=doc.get("split", "test"))


def save_manifest(manifest: DatasetManifest, out_dir: str | Path) -> Path:
    """Write manifest.json plus per-view annotation JSONL files."""
    out = Path(out_dir)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    doc = {"split": manifest.split, "pairs": []}
    for pair in manifest.pairs:
        entry = {"id": pair.id}
        for name in VIEWS:
            vs = pair.view(name)
            ann_rel = f"annotations/{pair.id}.{name}.jsonl"
            write_state_file(
                out / ann_rel,
                zip(vs.annotations.timestamps, vs.annotations.states),
                skip_absent=True,
            )
            entry[name] = {
                "frames": vs.frames_locator,
                "width": vs.width,
                "height": vs.height,
                "fps": vs.annotations.fps,
                "annotation_rate": vs.annotations.annotation_rate,
                "frame_count": vs.frame_count,
                "annotations": ann_rel,
            }
        doc["pairs"].append(entry)
    out_path = out / "manifest.json"
    out_path.write_text(json.dumps(doc, indent=1), encoding="utf-8")
    return out_path


def write_state_file(
    path: str | Path,
    entries: Iterable[tuple[int, State]],
    skip_absent: bool = False,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for t, state in entries:
            if skip_absent and is_absent(state):
                continue
            record = {"t": int(t)}
            record.update(state_to_json(state))
            fh.write(json.dumps(record) + "\n")

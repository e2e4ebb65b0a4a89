"""Mock trackers for conformance testing the wire protocol end to end.

``echo`` replays its initialization state forever. ``perfect`` and
``offset:dx,dy`` replay ground truth (optionally shifted) from annotation
files laid out as ``<gt-dir>/<seq>.<view>.jsonl``; the view is inferred
from an ``fpv``/``tpv`` segment of the init frame path, and the timestamp
is tracked by counting frames (the harness streams every frame in order).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .protocol import state_from_message
from .serve import AdapterSession


class MockError(RuntimeError):
    pass


def _mask_box(mask: np.ndarray) -> tuple[float, float, float, float]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise MockError("ground-truth mask has no positive pixels")
    return (
        float(cols[0]),
        float(rows[0]),
        float(cols[-1] - cols[0] + 1),
        float(rows[-1] - rows[0] + 1),
    )


def _load_gt(path: Path) -> dict[int, object]:
    states: dict[int, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            states[int(obj["t"])] = state_from_message(obj)
    return states


def _infer_view(frame_path: str) -> str:
    for part in Path(frame_path).parts:
        if part in ("fpv", "tpv"):
            return part
    raise MockError(f"cannot infer view from frame path {frame_path!r}")


class EchoMock:
    """Always predicts the initialization state."""

    def __init__(self):
        self.state = None

    def init(self, image, state) -> None:
        self.state = state

    def track(self, image):
        return self.state


class GroundTruthMock:
    """Replays annotations, optionally translating the derived box."""

    def __init__(self, gt_dir: str, dx: float = 0.0, dy: float = 0.0):
        self.gt_dir = Path(gt_dir)
        self.dx = dx
        self.dy = dy
        self.states: dict[int, object] = {}
        self.t = 0

    def on_init(self, msg: dict) -> None:
        view = _infer_view(msg.get("frame", ""))
        path = self.gt_dir / f"{msg['seq']}.{view}.jsonl"
        if not path.exists():
            raise MockError(f"no ground truth at {path}")
        self.states = _load_gt(path)
        self.t = 0

    def init(self, image, state) -> None:
        pass  # ground truth already loaded from the init message context

    def track(self, image):
        self.t += 1
        state = self.states.get(self.t)
        if state is None:
            return None
        if self.dx == 0.0 and self.dy == 0.0:
            return state
        box = _mask_box(state) if isinstance(state, np.ndarray) else state
        x, y, w, h = box
        return (x + self.dx, y + self.dy, w, h)


def build_mock_session(
    kind: str, gt_dir: str | None = None, strict: bool = False
) -> AdapterSession:
    if kind == "echo":
        mock = EchoMock()
    elif kind == "perfect" or kind.startswith("offset:"):
        if gt_dir is None:
            raise MockError(f"mock {kind!r} requires --gt-dir")
        dx = dy = 0.0
        if kind.startswith("offset:"):
            dx, dy = (float(v) for v in kind.split(":", 1)[1].split(","))
        mock = GroundTruthMock(gt_dir, dx, dy)
    else:
        raise MockError(f"unknown mock kind {kind!r}")
    return AdapterSession(
        init=mock.init,
        track=mock.track,
        strict=strict,
        load_frames=False,  # mocks never look at pixels
        on_init=getattr(mock, "on_init", None),
    )

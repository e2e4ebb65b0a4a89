"""Bundled scripted tracker speaking the subprocess wire protocol.

Exists so the wire path itself is oracle-tested: any scripted tracker can
run in-process or through this loop, and the two must score identically.
Ground-truth-dependent kinds read the annotation files written next to the
manifest; the view is inferred from an ``fpv``/``tpv`` segment of the init
frame path.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .model import (
    ABSENT,
    is_absent,
    load_state_file,
    parse_state_line,
    prediction_track_from_entries,
    state_to_json,
)
from .synth import ECHO_INIT, ScriptedTracker, scripted_prediction


def _view_from_path(frame_path: str) -> str | None:
    for part in Path(frame_path).parts:
        if part in ("fpv", "tpv"):
            return part
    return None


class WireScriptedTracker:
    def __init__(self, tracker: ScriptedTracker, annotations_root: str | None):
        self.tracker = tracker
        self.annotations_root = annotations_root
        self.gt = None
        self.view = None
        self.init_state = ABSENT
        self.scored = 0

    def handle_init(self, msg: dict) -> dict:
        _, self.init_state = parse_state_line({"t": 0, **_state_fields(msg)})
        if self.tracker.kind != ECHO_INIT:
            if self.annotations_root is None:
                raise ValueError(
                    f"kind {self.tracker.kind!r} needs --annotations-root"
                )
            self.view = _view_from_path(msg.get("frame", ""))
            if self.view is None:
                raise ValueError("cannot infer view from init frame path")
            path = Path(self.annotations_root) / f"{msg['seq']}.{self.view}.jsonl"
            entries = load_state_file(path)
            self.gt = prediction_track_from_entries(entries, 0)
        return {"status": "ok"}

    def handle_track(self, msg: dict) -> dict:
        t = int(msg["t"])
        if self.tracker.kind == ECHO_INIT:
            state = self.init_state
        elif self.gt is None or not self.gt.has_timestamp(t):
            state = ABSENT
        else:
            state = scripted_prediction(
                self.tracker, self.gt, self.view, t, self.init_state, self.scored
            )
            if not is_absent(self.gt.state_at(t)):
                self.scored += 1
        reply = {"t": t}
        if is_absent(state):
            reply["absent"] = True
        else:
            reply.update(state_to_json(state))
        return reply


def serve(tracker: ScriptedTracker, annotations_root: str | None,
          stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    session = WireScriptedTracker(tracker, annotations_root)
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
            cmd = msg.get("cmd")
            if cmd == "end":
                return 0
            if cmd == "init":
                reply = session.handle_init(msg)
            elif cmd == "track":
                reply = session.handle_track(msg)
            else:
                raise ValueError(f"unknown command {cmd!r}")
        except Exception as exc:
            stdout.write(json.dumps({"error": str(exc)}) + "\n")
            stdout.flush()
            return 1
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()
    return 0


def _state_fields(msg: dict) -> dict:
    fields = {}
    if "box" in msg:
        fields["box"] = msg["box"]
    if "rle" in msg:
        fields["rle"] = msg["rle"]
    return fields


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vista-eval mock-tracker",
        description="Scripted tracker served over the wire protocol.",
    )
    parser.add_argument("--kind", required=True,
                        help="echo_init | perfect | offset:DX,DY | "
                             "lose_after:K | view_biased:F,T")
    parser.add_argument("--annotations-root", default=None,
                        help="directory of <seq>.<view>.jsonl files "
                             "(required for ground-truth-dependent kinds)")
    args = parser.parse_args(argv)
    tracker = ScriptedTracker.parse(args.kind)
    return serve(tracker, args.annotations_root)


if __name__ == "__main__":
    sys.exit(main())

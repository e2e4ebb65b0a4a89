"""The adapter process loop: one request in flight, one reply per request.

A model plugs in as two callbacks, ``init(image, state)`` and
``track(image) -> state``; the adapter owns the stdin/stdout codec, loads
frames into arrays, and keeps the online contract (replies carry the
request's ``t``). A model exception yields an "absent" prediction and a
logged error unless strict mode is on.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .protocol import ProtocolMessageError, state_from_message, state_to_reply


@dataclass
class AdapterSession:
    """Model callbacks plus transport configuration for one tracker process."""

    init: Callable
    track: Callable
    representation: str = "box"
    strict: bool = False
    load_frames: bool = True
    # optional hook receiving the raw init message, for adapters that key
    # state off the sequence id or frame path (the bundled mocks do)
    on_init: Callable | None = None


def _load_image(path: str) -> np.ndarray | None:
    from PIL import Image

    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except (FileNotFoundError, OSError):
        # metric-only datasets ship no pixels; models that need them
        # will fail loudly on a None image
        return None


def serve(session: AdapterSession, stdin=None, stdout=None, stderr=None) -> int:
    """Speak the harness protocol until ``end``; returns the exit code."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    stderr = stderr if stderr is not None else sys.stderr

    def reply(obj: dict) -> None:
        stdout.write(json.dumps(obj) + "\n")
        stdout.flush()

    initialized = False
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ProtocolMessageError("message is not a JSON object")
            cmd = msg.get("cmd")
            if cmd == "end":
                return 0
            if cmd == "init":
                state = state_from_message(msg)
                if state is None:
                    raise ProtocolMessageError("init carries no target state")
                if session.on_init is not None:
                    session.on_init(msg)
                image = _load_image(msg["frame"]) if session.load_frames else None
                session.init(image, state)
                initialized = True
                reply({"status": "ok"})
                continue
            if cmd == "track":
                if not initialized:
                    raise ProtocolMessageError("track before init")
                t = int(msg["t"])
                image = _load_image(msg["frame"]) if session.load_frames else None
                try:
                    state = session.track(image)
                except Exception as exc:
                    if session.strict:
                        raise
                    print(f"[vista-adapter] model error at t={t}: {exc}",
                          file=stderr)
                    state = None
                reply(state_to_reply(t, state))
                continue
            raise ProtocolMessageError(f"unknown command {cmd!r}")
        except Exception as exc:
            reply({"error": f"{type(exc).__name__}: {exc}"})
            return 1
    return 0

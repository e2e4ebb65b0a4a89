"""Target-state encoding for the line-delimited JSON tracker protocol.

States are plain values: a box is ``(x, y, w, h)`` floats, a mask is a 2-D
boolean numpy array, absence is ``None``.
"""

from __future__ import annotations

import numpy as np

from .rle import RleError, decode, encode

BOX = "box"
MASK = "mask"


class ProtocolMessageError(ValueError):
    """A request from the harness does not match the wire grammar."""


def state_from_message(msg: dict):
    """Extract the target state carried by an init message."""
    if "box" in msg and "rle" in msg:
        raise ProtocolMessageError("message carries both box and rle")
    if "box" in msg:
        vals = msg["box"]
        if not isinstance(vals, (list, tuple)) or len(vals) != 4:
            raise ProtocolMessageError(f"box must be [x, y, w, h]: {vals!r}")
        return tuple(float(v) for v in vals)
    if "rle" in msg:
        try:
            return decode(msg["rle"])
        except RleError as exc:
            raise ProtocolMessageError(str(exc)) from exc
    return None


def state_to_reply(t: int, state) -> dict:
    """Build a prediction reply for timestamp ``t``."""
    if state is None:
        return {"t": t, "absent": True}
    if isinstance(state, np.ndarray):
        return {"t": t, "rle": encode(state)}
    x, y, w, h = (float(v) for v in state)
    return {"t": t, "box": [x, y, w, h]}

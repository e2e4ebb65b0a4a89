"""Standalone RLE codec for the wire format.

COCO-style uncompressed counts over the column-major flattening of a
binary raster, first run always background, serialized as a
whitespace-separated decimal string inside ``{"size": [h, w], "counts": "..."}``.
"""

from __future__ import annotations

import numpy as np


class RleError(ValueError):
    pass


def decode(obj: dict) -> np.ndarray:
    if not isinstance(obj, dict):
        raise RleError(f"rle must be an object, got {type(obj).__name__}")
    try:
        h, w = (int(v) for v in obj["size"])
    except (KeyError, TypeError, ValueError) as exc:
        raise RleError(f"bad rle size: {obj.get('size')!r}") from exc
    raw = obj.get("counts")
    if isinstance(raw, str):
        try:
            counts = np.array([int(tok) for tok in raw.split()], dtype=np.int64)
        except ValueError as exc:
            raise RleError(f"bad counts string: {raw!r}") from exc
    elif isinstance(raw, (list, tuple)):
        counts = np.asarray(raw, dtype=np.int64)
    else:
        raise RleError("counts must be a string or list of ints")
    if counts.size and (counts < 0).any():
        raise RleError("negative run length")
    if int(counts.sum()) != h * w:
        raise RleError(
            f"run lengths sum to {int(counts.sum())}, expected {h * w}"
        )
    values = np.zeros(counts.size, dtype=bool)
    values[1::2] = True
    return np.repeat(values, counts).reshape((h, w), order="F")


def encode(mask: np.ndarray) -> dict:
    arr = np.asarray(mask, dtype=bool)
    if arr.ndim != 2:
        raise RleError(f"mask must be 2-D, got shape {arr.shape}")
    h, w = arr.shape
    flat = arr.ravel(order="F")
    if flat.size == 0:
        return {"size": [h, w], "counts": ""}
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds)
    if flat[0]:
        counts = np.concatenate(([0], counts))
    return {"size": [h, w], "counts": " ".join(str(int(c)) for c in counts)}

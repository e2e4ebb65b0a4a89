"""Geometric kernel: RLE mask codec, IoU primitives, box/mask conversions.

Masks are binary rasters indexed [row, col]; boxes are ``[x, y, w, h]`` in
pixels with a top-left origin and continuous (float) coordinates. The RLE
interchange format is COCO-style uncompressed counts, column-major, always
starting with the background run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class RleError(ValueError):
    """Malformed run-length encoding (bad counts, wrong total, bad types)."""


class EmptyMaskError(ValueError):
    """Operation requires at least one positive pixel."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, ``[x, y, w, h]`` float pixels, top-left origin."""

    x: float
    y: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


class BinaryMask:
    """Immutable binary raster with an RLE-backed interchange form."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        arr = np.ascontiguousarray(data, dtype=bool)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):  # pragma: no cover - guard only
        raise AttributeError("BinaryMask is immutable")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def positive_count(self) -> int:
        return int(self.data.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )

    def __hash__(self):  # masks are mutable-sized payloads; not hashable
        raise TypeError("BinaryMask is not hashable")

    def __repr__(self) -> str:
        return f"BinaryMask({self.height}x{self.width}, positives={self.positive_count})"

    @classmethod
    def from_counts(cls, counts, height: int, width: int) -> "BinaryMask":
        """Decode uncompressed column-major RLE counts into a raster."""
        c = np.asarray(counts, dtype=np.int64)
        if c.ndim != 1:
            raise RleError("counts must be a flat sequence")
        if c.size and (c < 0).any():
            raise RleError("negative run length")
        total = int(c.sum())
        if total != height * width:
            raise RleError(
                f"run lengths sum to {total}, expected {height * width} for "
                f"{height}x{width} mask"
            )
        values = np.zeros(c.size, dtype=bool)
        values[1::2] = True
        flat = np.repeat(values, c)
        return cls(flat.reshape((height, width), order="F"))

    def counts(self) -> np.ndarray:
        """Uncompressed column-major RLE counts, background run first."""
        flat = self.data.ravel(order="F")
        n = flat.size
        if n == 0:
            return np.zeros(0, dtype=np.int64)
        change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
        bounds = np.concatenate(([0], change, [n]))
        counts = np.diff(bounds)
        if flat[0]:
            counts = np.concatenate(([0], counts))
        return counts.astype(np.int64)


def rle_from_json(obj: dict) -> BinaryMask:
    """Parse the wire form ``{"size": [h, w], "counts": "..."}``.

    ``counts`` is a whitespace-separated decimal string; a plain list of
    ints is accepted on input for COCO compatibility.
    """
    if not isinstance(obj, dict):
        raise RleError(f"rle must be an object, got {type(obj).__name__}")
    try:
        h, w = (int(v) for v in obj["size"])
    except (KeyError, TypeError, ValueError) as exc:
        raise RleError(f"bad rle size field: {obj.get('size')!r}") from exc
    raw = obj.get("counts")
    if isinstance(raw, str):
        try:
            counts = [int(tok) for tok in raw.split()]
        except ValueError as exc:
            raise RleError(f"bad rle counts string: {raw!r}") from exc
    elif isinstance(raw, (list, tuple)):
        try:
            counts = [int(v) for v in raw]
        except (TypeError, ValueError) as exc:
            raise RleError("bad rle counts list") from exc
    else:
        raise RleError("rle counts must be a string or list of ints")
    return BinaryMask.from_counts(counts, h, w)


def rle_to_json(mask: BinaryMask) -> dict:
    counts = " ".join(str(int(c)) for c in mask.counts())
    return {"size": [mask.height, mask.width], "counts": counts}


def box_iou(a: Box, b: Box) -> float:
    """Analytic intersection-over-union; 0.0 whenever the union is empty."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0.0 or iy <= 0.0:
        inter = 0.0
    else:
        inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    if a.data.shape != b.data.shape:
        raise ValueError(
            f"mask dimension mismatch: {a.data.shape} vs {b.data.shape}"
        )
    inter = int(np.logical_and(a.data, b.data).sum())
    union = int(np.logical_or(a.data, b.data).sum())
    if union == 0:
        return 0.0
    return inter / union


def mask_to_box(m: BinaryMask) -> Box:
    """Tightest box around the positive pixels (errors on empty masks)."""
    rows = np.flatnonzero(m.data.any(axis=1))
    if rows.size == 0:
        raise EmptyMaskError("cannot derive a box from an empty mask")
    cols = np.flatnonzero(m.data.any(axis=0))
    r0, r1 = int(rows[0]), int(rows[-1])
    c0, c1 = int(cols[0]), int(cols[-1])
    return Box(float(c0), float(r0), float(c1 - c0 + 1), float(r1 - r0 + 1))


def pixel_bounds(b: Box, height: int, width: int) -> tuple[int, int, int, int]:
    """Half-open pixel rectangle (r0, r1, c0, c1) for a box clamped to frame."""
    c0 = int(math.floor(b.x + 0.5))
    c1 = int(math.floor(b.x + b.w + 0.5))
    r0 = int(math.floor(b.y + 0.5))
    r1 = int(math.floor(b.y + b.h + 0.5))
    c0 = min(max(c0, 0), width)
    c1 = min(max(c1, 0), width)
    r0 = min(max(r0, 0), height)
    r1 = min(max(r1, 0), height)
    return r0, r1, c0, c1


def box_fill_mask(b: Box, height: int, width: int) -> BinaryMask:
    """Rasterize a box into a filled mask (clamped to the frame)."""
    if height <= 0 or width <= 0:
        raise ValueError("frame dimensions must be positive")
    data = np.zeros((height, width), dtype=bool)
    r0, r1, c0, c1 = pixel_bounds(b, height, width)
    if r1 > r0 and c1 > c0:
        data[r0:r1, c0:c1] = True
    return BinaryMask(data)


def barycenter(m: BinaryMask) -> tuple[float, float]:
    """Mean (x, y) of the positive pixel coordinates."""
    rows, cols = np.nonzero(m.data)
    if rows.size == 0:
        raise EmptyMaskError("barycenter of an empty mask")
    return float(cols.mean()), float(rows.mean())


def center_distance_bin(point: tuple[float, float], frame_w: float, frame_h: float) -> int:
    """Four-region bin of distance from frame center, in frame-width units.

    Thresholds at 0.25/0.50/0.75 of the frame width; boundary values go to
    the lower bin.
    """
    dx = point[0] - frame_w / 2.0
    dy = point[1] - frame_h / 2.0
    d = math.hypot(dx, dy)
    if d <= 0.25 * frame_w:
        return 0
    if d <= 0.50 * frame_w:
        return 1
    if d <= 0.75 * frame_w:
        return 2
    return 3


def boundary_pixels(m: BinaryMask) -> BinaryMask:
    """Positive pixels with at least one background/out-of-frame 4-neighbor."""
    a = m.data
    padded = np.pad(a, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1]
        & padded[2:, 1:-1]
        & padded[1:-1, :-2]
        & padded[1:-1, 2:]
    )
    return BinaryMask(a & ~interior)


def dilate_square(a: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation with a (2r+1)^2 square element, done separably."""
    out = np.asarray(a, dtype=bool).copy()
    if radius <= 0:
        return out
    for axis in (0, 1):
        src = out.copy()
        for s in range(1, radius + 1):
            if axis == 0:
                out[s:, :] |= src[:-s, :]
                out[:-s, :] |= src[s:, :]
            else:
                out[:, s:] |= src[:, :-s]
                out[:, :-s] |= src[:, s:]
    return out


def boundary_f_tolerance(height: int, width: int) -> int:
    """Default boundary-match tolerance: 0.8% of the image diagonal."""
    return int(round(0.008 * math.hypot(height, width)))

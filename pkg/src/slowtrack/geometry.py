"""Bounding-box arithmetic, overlap metrics and patch extraction.

All boxes are axis-aligned (x, y, w, h) in pixel coordinates with the
origin at the top-left corner of the frame. Everything here is a pure
function; nothing holds state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OutOfViewError


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: top-left corner (x, y) plus width and height."""

    x: float
    y: float
    w: float
    h: float

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    def shifted(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)

    def clipped(self, frame_w: float, frame_h: float) -> "BBox":
        """Intersect with the frame rectangle. May return a degenerate box
        (w or h <= 0) when there is no overlap; callers must check."""
        x0 = max(self.x, 0.0)
        y0 = max(self.y, 0.0)
        x1 = min(self.x + self.w, float(frame_w))
        y1 = min(self.y + self.h, float(frame_h))
        return BBox(x0, y0, x1 - x0, y1 - y0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class Patch:
    """Fixed-size normalized pixel block cropped from a frame.

    pixels is (S, S) for grayscale or (S, S, 3) for RGB, float64, scaled
    to [0, 1] and shifted to zero mean. source_box is the box that was
    requested (before any clipping to the frame).
    """

    pixels: np.ndarray
    source_box: BBox

    @property
    def side(self) -> int:
        return self.pixels.shape[0]

    def flat(self) -> np.ndarray:
        return self.pixels.ravel()


def _require_valid(box: BBox, name: str = "box") -> None:
    if box.w <= 0 or box.h <= 0:
        raise ValueError(f"degenerate {name}: w={box.w}, h={box.h}")


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes, in [0, 1]."""
    _require_valid(a, "first box")
    _require_valid(b, "second box")
    # Work entirely in corner coordinates: deriving widths as x2 - x makes
    # iou(a, a) == 1.0 exact and keeps the result <= 1 under rounding.
    ax2, ay2 = a.x + a.w, a.y + a.h
    bx2, by2 = b.x + b.w, b.y + b.h
    area_a = (ax2 - a.x) * (ay2 - a.y)
    area_b = (bx2 - b.x) * (by2 - b.y)
    ix = max(min(ax2, bx2) - max(a.x, b.x), 0.0)
    iy = max(min(ay2, by2) - max(a.y, b.y), 0.0)
    inter = ix * iy
    union = area_a + area_b - inter
    return inter / union


def iou_many(boxes: np.ndarray, ref: BBox) -> np.ndarray:
    """IoU of each row of an (N, 4) x/y/w/h array against one reference box."""
    _require_valid(ref, "reference box")
    boxes = np.asarray(boxes, dtype=np.float64)
    x2 = boxes[:, 0] + boxes[:, 2]
    y2 = boxes[:, 1] + boxes[:, 3]
    rx2, ry2 = ref.x + ref.w, ref.y + ref.h
    areas = (x2 - boxes[:, 0]) * (y2 - boxes[:, 1])
    area_ref = (rx2 - ref.x) * (ry2 - ref.y)
    ix = np.maximum(np.minimum(x2, rx2) - np.maximum(boxes[:, 0], ref.x), 0.0)
    iy = np.maximum(np.minimum(y2, ry2) - np.maximum(boxes[:, 1], ref.y), 0.0)
    inter = ix * iy
    union = areas + area_ref - inter
    return inter / union


def center_distance(a: BBox, b: BBox) -> float:
    """Euclidean distance between box centers, in pixels."""
    _require_valid(a, "first box")
    _require_valid(b, "second box")
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


def average_boxes(boxes: list[BBox]) -> BBox:
    """Component-wise arithmetic mean of boxes.

    Averaging is anchored on the first box so that averaging k copies of
    one box reproduces it bit-exactly (a plain sum/k does not).
    """
    if not boxes:
        raise ValueError("average_boxes needs a non-empty list")
    first = boxes[0]
    k = len(boxes)

    def mean(attr: str) -> float:
        base = getattr(first, attr)
        return base + math.fsum(getattr(b, attr) - base for b in boxes) / k

    return BBox(mean("x"), mean("y"), mean("w"), mean("h"))


def _bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample image at float coordinates with edge clamping.

    image is (H, W) or (H, W, C) float64; xs/ys share a shape and index
    columns/rows respectively.
    """
    h, w = image.shape[:2]
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    if image.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = image[y0, x0] * (1.0 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1.0 - fx) + image[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def crop_resize_normalize(image: np.ndarray, box: BBox, side: int) -> Patch:
    """Crop the box region, resample it to side x side, and normalize.

    The box is clipped to the frame first; sampling uses bilinear
    interpolation at output-pixel centers. Values are scaled to [0, 1]
    and the patch mean is subtracted.
    """
    if side <= 0:
        raise ValueError(f"patch side must be positive, got {side}")
    h, w = image.shape[:2]
    clip = box.clipped(w, h)
    if clip.w <= 0 or clip.h <= 0:
        raise OutOfViewError(
            f"box ({box.x:.1f},{box.y:.1f},{box.w:.1f},{box.h:.1f}) "
            f"has no overlap with a {w}x{h} frame"
        )
    pixels = _crop_core(np.asarray(image, dtype=np.float64), clip, side)
    return Patch(pixels, box)


def crop_many(image: np.ndarray, boxes: list[BBox], side: int) -> np.ndarray:
    """Crop several boxes from one frame; returns (N, S, S[, C]).

    Same semantics as crop_resize_normalize applied per box.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    out = np.empty((len(boxes), side, side) + img.shape[2:], dtype=np.float64)
    for i, box in enumerate(boxes):
        clip = box.clipped(w, h)
        if clip.w <= 0 or clip.h <= 0:
            raise OutOfViewError(f"box {i} has no overlap with the frame")
        out[i] = _crop_core(img, clip, side)
    return out


def _crop_core(img: np.ndarray, clip: BBox, side: int) -> np.ndarray:
    steps = np.arange(side, dtype=np.float64) + 0.5
    xs = clip.x + steps * (clip.w / side) - 0.5
    ys = clip.y + steps * (clip.h / side) - 0.5
    grid_x, grid_y = np.meshgrid(xs, ys)
    vals = _bilinear_sample(img, grid_x, grid_y) / 255.0
    return vals - vals.mean()

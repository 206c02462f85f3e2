"""Axis-aligned box arithmetic and the boundary-distance encoding of dense detectors.

Boxes are ``(x1, y1, x2, y2)`` in continuous scene units. A grid location is
the center of a unit cell, ``(col + 0.5, row + 0.5)``, enumerated row-major.
Boundary distances are ``(l, t, r, b)``.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(np.isfinite(coords)):
            raise ValueError(f"non-finite box {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"box must have positive area, got {coords}")

    @property
    def area(self):
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_array(self):
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)


def _as_boxes(boxes):
    if isinstance(boxes, Box):
        return boxes.as_array()
    return np.asarray(boxes, dtype=np.float64)


def box_area(boxes):
    b = _as_boxes(boxes)
    return (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])


def iou(a, b):
    """IoU of two boxes (``Box`` or length-4 arrays); broadcasts over leading axes."""
    a = _as_boxes(a)
    b = _as_boxes(b)
    iw = np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    ih = np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    union = box_area(a) + box_area(b) - inter
    out = inter / union
    return float(out) if np.ndim(out) == 0 else out


def iou_matrix(a, b):
    """Pairwise IoU between ``(n, 4)`` and ``(m, 4)`` box arrays."""
    a = np.reshape(_as_boxes(a), (-1, 4))
    b = np.reshape(_as_boxes(b), (-1, 4))
    return iou(a[:, None, :], b[None, :, :])


def grid_locations(grid_w, grid_h):
    """Cell centers of a ``grid_w x grid_h`` grid, shape ``(grid_h * grid_w, 2)``."""
    cols, rows = np.meshgrid(np.arange(grid_w), np.arange(grid_h))
    return np.stack([cols.ravel() + 0.5, rows.ravel() + 0.5], axis=1).astype(np.float64)


def encode_distances(box, p):
    """Distances ``(l, t, r, b)`` from location(s) ``p`` to the edges of ``box``.

    Raises ``ValueError`` if any location lies outside its box, which means
    the caller assigned a location to the wrong box.
    """
    b = _as_boxes(box)
    p = np.asarray(p, dtype=np.float64)
    d = np.stack(
        [p[..., 0] - b[..., 0], p[..., 1] - b[..., 1], b[..., 2] - p[..., 0], b[..., 3] - p[..., 1]],
        axis=-1,
    )
    if np.any(d < 0):
        raise ValueError("location outside box: negative boundary distance")
    return d


def decode_box(d, p):
    """Inverse of :func:`encode_distances`."""
    d = np.asarray(d, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if np.any(d[..., 0] + d[..., 2] <= 0) or np.any(d[..., 1] + d[..., 3] <= 0):
        raise ValueError("decoded box has nonpositive width or height")
    return np.stack(
        [p[..., 0] - d[..., 0], p[..., 1] - d[..., 1], p[..., 0] + d[..., 2], p[..., 1] + d[..., 3]],
        axis=-1,
    )


def centerness(d):
    """sqrt(min(l,r)/max(l,r) * min(t,b)/max(t,b)); requires all distances > 0."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise ValueError("centerness needs strictly positive distances")
    lr = np.minimum(d[..., 0], d[..., 2]) / np.maximum(d[..., 0], d[..., 2])
    tb = np.minimum(d[..., 1], d[..., 3]) / np.maximum(d[..., 1], d[..., 3])
    out = np.sqrt(lr * tb)
    return float(out) if np.ndim(out) == 0 else out

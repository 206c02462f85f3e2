"""Hot inner loops: label assignment, greedy NMS and greedy detection matching.

Each kernel has a numba ``@njit`` implementation and a pure-numpy fallback
with identical semantics. The numba path is used when numba imports and the
environment variable ``SEMIDET_NUMBA`` is not set to ``0``.
"""

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("SEMIDET_NUMBA", "1") != "0"


def _njit(func):
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return func  # pragma: no cover


# ---------------------------------------------------------------------------
# label assignment
# ---------------------------------------------------------------------------

@_njit
def _assign_nb(cx, cy, boxes, radius):
    n = cx.shape[0]
    m = boxes.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        best = -1
        best_area = np.inf
        for j in range(m):
            x1 = boxes[j, 0]
            y1 = boxes[j, 1]
            x2 = boxes[j, 2]
            y2 = boxes[j, 3]
            if not (x1 < cx[i] < x2 and y1 < cy[i] < y2):
                continue
            if radius > 0.0:
                if abs(cx[i] - 0.5 * (x1 + x2)) >= radius:
                    continue
                if abs(cy[i] - 0.5 * (y1 + y2)) >= radius:
                    continue
            area = (x2 - x1) * (y2 - y1)
            if area < best_area:
                best_area = area
                best = j
        out[i] = best
    return out


def _assign_np(cx, cy, boxes, radius):
    n = cx.shape[0]
    if boxes.shape[0] == 0:
        return np.full(n, -1, dtype=np.int64)
    x1, y1, x2, y2 = (boxes[:, k][None, :] for k in range(4))
    px = cx[:, None]
    py = cy[:, None]
    inside = (x1 < px) & (px < x2) & (y1 < py) & (py < y2)
    if radius > 0.0:
        inside &= np.abs(px - 0.5 * (x1 + x2)) < radius
        inside &= np.abs(py - 0.5 * (y1 + y2)) < radius
    area = np.broadcast_to((x2 - x1) * (y2 - y1), inside.shape)
    masked = np.where(inside, area, np.inf)
    # argmin returns the first minimum, matching the strict '<' in the loop
    best = np.argmin(masked, axis=1)
    return np.where(inside.any(axis=1), best, -1).astype(np.int64)


def assign_locations(cx, cy, boxes, radius=0.0):
    """Index of the smallest-area box containing each location, or -1.

    ``radius > 0`` additionally requires the location to be strictly within
    ``radius`` (Chebyshev) of the box center.
    """
    cx = np.ascontiguousarray(cx, dtype=np.float64)
    cy = np.ascontiguousarray(cy, dtype=np.float64)
    boxes = np.ascontiguousarray(np.reshape(boxes, (-1, 4)), dtype=np.float64)
    if USE_NUMBA:
        return _assign_nb(cx, cy, boxes, float(radius))
    return _assign_np(cx, cy, boxes, float(radius))


# ---------------------------------------------------------------------------
# NMS
# ---------------------------------------------------------------------------

@_njit
def _iou_pair(a, b):
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


@_njit
def _nms_nb(boxes, classes, thresh):
    n = boxes.shape[0]
    keep = np.ones(n, dtype=np.bool_)
    for i in range(n):
        if not keep[i]:
            continue
        for j in range(i + 1, n):
            if keep[j] and classes[j] == classes[i]:
                if _iou_pair(boxes[i], boxes[j]) > thresh:
                    keep[j] = False
    return keep


def _nms_np(boxes, classes, thresh):
    n = boxes.shape[0]
    keep = np.ones(n, dtype=bool)
    if n == 0:
        return keep
    x1, y1, x2, y2 = boxes.T
    areas = (x2 - x1) * (y2 - y1)
    for i in range(n):
        if not keep[i]:
            continue
        rest = np.arange(i + 1, n)
        rest = rest[keep[rest] & (classes[rest] == classes[i])]
        if rest.size == 0:
            continue
        iw = np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest])
        ih = np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest])
        inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
        ovr = inter / (areas[i] + areas[rest] - inter)
        keep[rest[ovr > thresh]] = False
    return keep


def nms_sorted(boxes, classes, thresh):
    """Class-wise greedy NMS over boxes already sorted by priority.

    Returns a keep mask aligned with the input order.
    """
    boxes = np.ascontiguousarray(np.reshape(boxes, (-1, 4)), dtype=np.float64)
    classes = np.ascontiguousarray(classes, dtype=np.int64)
    if USE_NUMBA:
        return _nms_nb(boxes, classes, float(thresh))
    return _nms_np(boxes, classes, float(thresh))


# ---------------------------------------------------------------------------
# greedy matching
# ---------------------------------------------------------------------------

@_njit
def _match_nb(det_boxes, det_cls, gt_boxes, gt_cls, thresh):
    n = det_boxes.shape[0]
    m = gt_boxes.shape[0]
    taken = np.zeros(m, dtype=np.bool_)
    out = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        best = -1
        best_iou = thresh
        for j in range(m):
            if taken[j] or gt_cls[j] != det_cls[i]:
                continue
            v = _iou_pair(det_boxes[i], gt_boxes[j])
            # ties in IoU go to the earlier truth
            if v >= best_iou and (best < 0 or v > best_iou):
                best_iou = v
                best = j
        if best >= 0:
            taken[best] = True
            out[i] = best
    return out


def _match_np(det_boxes, det_cls, gt_boxes, gt_cls, thresh):
    n = det_boxes.shape[0]
    m = gt_boxes.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    if n == 0 or m == 0:
        return out
    a = det_boxes[:, None, :]
    b = gt_boxes[None, :, :]
    iw = np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    ih = np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    ious = inter / (area_a + area_b - inter)
    ious[det_cls[:, None] != gt_cls[None, :]] = -1.0
    taken = np.zeros(m, dtype=bool)
    for i in range(n):
        row = np.where(taken, -1.0, ious[i])
        j = int(np.argmax(row))
        if row[j] >= thresh:
            taken[j] = True
            out[i] = j
    return out


def greedy_match(det_boxes, det_cls, gt_boxes, gt_cls, thresh):
    """Match detections (in the given order) to the highest-IoU free truth.

    Only same-class pairs with IoU >= ``thresh`` qualify. Returns, per
    detection, the matched truth index or -1.
    """
    det_boxes = np.ascontiguousarray(np.reshape(det_boxes, (-1, 4)), dtype=np.float64)
    gt_boxes = np.ascontiguousarray(np.reshape(gt_boxes, (-1, 4)), dtype=np.float64)
    det_cls = np.ascontiguousarray(det_cls, dtype=np.int64)
    gt_cls = np.ascontiguousarray(gt_cls, dtype=np.int64)
    if USE_NUMBA:
        return _match_nb(det_boxes, det_cls, gt_boxes, gt_cls, float(thresh))
    return _match_np(det_boxes, det_cls, gt_boxes, gt_cls, float(thresh))

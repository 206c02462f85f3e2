"""Turning dense teacher predictions into pseudo-boxes."""

from dataclasses import dataclass

import numpy as np

from .geometry import grid_locations
from ._kernels import greedy_match, nms_sorted

MODES = ("class_score", "box_score")
CONFIG_NAMES = {"class": "class_score", "box-score": "box_score"}


@dataclass
class DensePrediction:
    """Per-location head outputs of one scene (row-major locations)."""

    probs: np.ndarray    # (n, C) per-class sigmoid
    ctr: np.ndarray      # (n,)
    dist: np.ndarray     # (n, 4) l, t, r, b
    delta: np.ndarray    # (n, 4) localization uncertainty, > 0
    grid_w: int
    grid_h: int
    logits: np.ndarray = None  # (n, C + 9) raw head outputs, kept for gradients

    @property
    def locations(self):
        return grid_locations(self.grid_w, self.grid_h)

    def boxes(self):
        p = self.locations
        d = self.dist
        return np.stack([p[:, 0] - d[:, 0], p[:, 1] - d[:, 1], p[:, 0] + d[:, 2], p[:, 1] + d[:, 3]], axis=1)


@dataclass(frozen=True)
class SelectorConfig:
    mode: str = "class_score"
    tau: float = 0.5
    nms_iou: float = 0.6

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown selector mode {self.mode!r}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must be in (0, 1)")
        if not 0.0 < self.nms_iou < 1.0:
            raise ValueError("nms_iou must be in (0, 1)")

    @classmethod
    def from_config(cls, name, tau=0.5, nms_iou=0.6):
        if name not in CONFIG_NAMES:
            raise ValueError(f"selector must be one of {sorted(CONFIG_NAMES)}, got {name!r}")
        return cls(CONFIG_NAMES[name], tau, nms_iou)


@dataclass(frozen=True)
class PseudoBox:
    box: tuple
    cls: int
    score: float
    delta: tuple
    location: int


@dataclass
class PseudoBoxes:
    """Selected pseudo-boxes of one scene, stored column-wise, in NMS priority order."""

    boxes: np.ndarray     # (k, 4)
    classes: np.ndarray   # (k,)
    scores: np.ndarray    # (k,)
    delta: np.ndarray     # (k, 4) teacher uncertainty per boundary
    locations: np.ndarray  # (k,) source location index

    def __len__(self):
        return len(self.scores)

    def __iter__(self):
        for i in range(len(self)):
            yield PseudoBox(tuple(self.boxes[i]), int(self.classes[i]), float(self.scores[i]),
                            tuple(self.delta[i]), int(self.locations[i]))

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 4)), np.zeros(0, np.int64), np.zeros(0), np.zeros((0, 4)), np.zeros(0, np.int64))


def score(probs, ctr, mode):
    """Selection score: max class probability, times centerness in ``box_score`` mode."""
    s = np.max(probs, axis=-1)
    if mode == "box_score":
        return s * ctr
    if mode == "class_score":
        return s
    raise ValueError(f"unknown selector mode {mode!r}")


def select_pseudo_boxes(pred, cfg):
    """Threshold at ``tau``, then class-wise greedy NMS.

    Candidates are ranked by (score desc, location index asc), so the result
    does not depend on how locations happen to be enumerated elsewhere.
    """
    s = score(pred.probs, pred.ctr, cfg.mode)
    cand = np.flatnonzero(s >= cfg.tau)
    if cand.size == 0:
        return PseudoBoxes.empty()
    order = cand[np.lexsort((cand, -s[cand]))]
    boxes = pred.boxes()[order]
    ok = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    order, boxes = order[ok], boxes[ok]
    classes = np.argmax(pred.probs[order], axis=1)
    keep = nms_sorted(boxes, classes, cfg.nms_iou)
    idx = order[keep]
    return PseudoBoxes(boxes=boxes[keep], classes=classes[keep], scores=s[idx],
                       delta=pred.delta[idx], locations=idx)


def match_by_score(boxes, classes, scores, truth_boxes, truth_classes, iou_match):
    """Greedy one-to-one matching in descending score order (stable for ties)."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    matched = greedy_match(np.reshape(boxes, (-1, 4))[order], np.asarray(classes)[order],
                           truth_boxes, truth_classes, iou_match)
    out = np.empty_like(matched)
    out[order] = matched
    return out


def match_counts(pseudo, truth_boxes, truth_classes, iou_match=0.5):
    """``(matched, n_pseudo, n_truth)`` for aggregating quality over many scenes."""
    truth_boxes = np.reshape(np.asarray(truth_boxes, dtype=np.float64), (-1, 4))
    if len(pseudo) == 0:
        return 0, 0, len(truth_boxes)
    m = match_by_score(pseudo.boxes, pseudo.classes, pseudo.scores, truth_boxes, truth_classes, iou_match)
    return int(np.count_nonzero(m >= 0)), len(pseudo), len(truth_boxes)


def pseudo_label_quality(pseudo, truth_boxes, truth_classes, iou_match=0.5):
    """Precision and recall of pseudo-boxes against the truth of one scene."""
    return precision_recall(*match_counts(pseudo, truth_boxes, truth_classes, iou_match))


def precision_recall(matched, n_pred, n_truth):
    """Ratios from match counts; an empty denominator gives 1."""
    precision = 1.0 if n_pred == 0 else matched / n_pred
    recall = 1.0 if n_truth == 0 else matched / n_truth
    return precision, recall

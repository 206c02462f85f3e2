"""COCO-style average precision and the evaluation report.

AP uses 101-point interpolation over recall levels 0.00, 0.01, ..., 1.00.
Recall levels are compared in integer arithmetic (``tp * 100 >= i * n_truth``)
so a recall of exactly 0.29 counts for the 0.29 level.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .detector import DetectorParams, forward
from .assignment import AssignmentStrategy, assign, pixel_f1
from .listen2student import build_candidates, regime_mask, selection_counts, truth_distances
from .pseudolabel import SelectorConfig, match_by_score, match_counts, precision_recall, select_pseudo_boxes
from .simworld import latent_center, mixing_matrix, oracle_truth

AP_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
BREAKDOWN_THRESHOLDS = AP_THRESHOLDS[1:]
RECALL_LEVELS = 101


def interpolated_ap(is_tp, n_truth):
    """101-point AP from a ranked TP/FP sequence over ``n_truth`` positives."""
    is_tp = np.asarray(is_tp, dtype=bool)
    if n_truth == 0:
        return 1.0 if is_tp.size == 0 else 0.0
    if is_tp.size == 0:
        return 0.0
    tp = np.cumsum(is_tp)
    ranks = np.arange(1, is_tp.size + 1)
    precision = tp / ranks
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    levels = np.arange(RECALL_LEVELS)
    # first rank whose recall reaches each level, exactly
    idx = np.searchsorted(tp * (RECALL_LEVELS - 1), levels * n_truth, side="left")
    hit = idx < tp.size
    vals = np.zeros(RECALL_LEVELS)
    vals[hit] = envelope[idx[hit]]
    return math.fsum(vals.tolist()) / RECALL_LEVELS


def _class_sequence(det_per_scene, truth_per_scene, cls, iou_thr):
    """Ranked TP flags and truth count for one class over many scenes."""
    scores, flags = [], []
    n_truth = 0
    for dets, truth in zip(det_per_scene, truth_per_scene):
        t_boxes, t_cls = truth
        keep_t = t_cls == cls
        n_truth += int(keep_t.sum())
        d_boxes, d_cls, d_scores = dets
        keep_d = d_cls == cls
        if not keep_d.any():
            continue
        m = match_by_score(d_boxes[keep_d], d_cls[keep_d], d_scores[keep_d],
                           t_boxes[keep_t], t_cls[keep_t], iou_thr)
        scores.append(d_scores[keep_d])
        flags.append(m >= 0)
    if not scores:
        return np.zeros(0, dtype=bool), n_truth
    scores = np.concatenate(scores)
    flags = np.concatenate(flags)
    order = np.argsort(-scores, kind="stable")
    return flags[order], n_truth


def _normalize_dets(dets):
    if isinstance(dets, tuple) and len(dets) == 3 and isinstance(dets[0], np.ndarray):
        return (np.reshape(dets[0], (-1, 4)).astype(np.float64), np.asarray(dets[1], np.int64),
                np.asarray(dets[2], np.float64))
    dets = list(dets)
    if not dets:
        return np.zeros((0, 4)), np.zeros(0, np.int64), np.zeros(0)
    boxes = np.array([np.asarray(getattr(b, "as_array", lambda: b)(), np.float64) for b, _, _ in dets])
    return boxes.reshape(-1, 4), np.array([c for _, c, _ in dets], np.int64), np.array([s for _, _, s in dets], float)


def _normalize_truth(truth):
    if isinstance(truth, tuple) and len(truth) == 2 and isinstance(truth[0], np.ndarray):
        return np.reshape(truth[0], (-1, 4)).astype(np.float64), np.asarray(truth[1], np.int64)
    truth = list(truth)
    if not truth:
        return np.zeros((0, 4)), np.zeros(0, np.int64)
    boxes = np.array([np.asarray(getattr(b, "as_array", lambda: b)(), np.float64) for b, _ in truth])
    return boxes.reshape(-1, 4), np.array([c for _, c in truth], np.int64)


def per_class_ap(det_per_scene, truth_per_scene, iou_thr, classes):
    dets = [_normalize_dets(d) for d in det_per_scene]
    truths = [_normalize_truth(t) for t in truth_per_scene]
    out = {}
    for c in classes:
        flags, n_truth = _class_sequence(dets, truths, c, iou_thr)
        out[int(c)] = interpolated_ap(flags, n_truth)
    return out


def _present_classes(det_per_scene, truth_per_scene):
    found = set()
    for d in det_per_scene:
        found.update(_normalize_dets(d)[1].tolist())
    for t in truth_per_scene:
        found.update(_normalize_truth(t)[1].tolist())
    return sorted(found)


def compute_ap_scenes(det_per_scene, truth_per_scene, iou_thr, classes=None):
    """Mean per-class AP over several scenes (matching happens within a scene)."""
    if classes is None:
        classes = _present_classes(det_per_scene, truth_per_scene)
    if len(classes) == 0:
        return 1.0
    aps = per_class_ap(det_per_scene, truth_per_scene, iou_thr, classes)
    return float(np.mean([aps[c] for c in classes]))


def compute_ap(detections, truths, iou_thr, classes=None):
    """AP of one scene's detections ``[(box, cls, score), ...]`` against ``[(box, cls), ...]``.

    Detections are ranked by score (ties keep input order) and greedily
    matched to the highest-IoU unmatched truth of the same class. A class
    with neither truths nor detections scores 1; detections without truths
    score 0.
    """
    return compute_ap_scenes([detections], [truths], iou_thr, classes)


def ap_breakdown(detections, truths, thresholds=BREAKDOWN_THRESHOLDS, classes=None):
    return {t: compute_ap(detections, truths, t, classes) for t in thresholds}


def ap_breakdown_scenes(det_per_scene, truth_per_scene, thresholds=BREAKDOWN_THRESHOLDS, classes=None):
    return {t: compute_ap_scenes(det_per_scene, truth_per_scene, t, classes) for t in thresholds}


@dataclass
class EvalReport:
    ap: dict
    map_50_95: float
    per_class: dict
    pseudo_precision: float = None
    pseudo_recall: float = None
    assignment: dict = field(default_factory=dict)
    selection: dict = field(default_factory=dict)
    config_hash: str = None

    def to_dict(self):
        d = asdict(self)
        d["ap"] = {f"{t:.2f}": v for t, v in self.ap.items()}
        d["per_class"] = {str(c): v for c, v in self.per_class.items()}
        if d["config_hash"] is None:
            d.pop("config_hash")
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["ap"] = {float(k): v for k, v in d["ap"].items()}
        d["per_class"] = {int(k): v for k, v in d["per_class"].items()}
        return cls(**d)


def evaluate_detections(det_per_scene, scenes, class_count, **extra):
    """Report for precomputed detections; truth comes through the oracle path."""
    truths = [oracle_truth(s) for s in scenes]
    classes = list(range(class_count))
    table = {t: per_class_ap(det_per_scene, truths, t, classes) for t in AP_THRESHOLDS}
    ap = {t: float(np.mean([table[t][c] for c in classes])) for t in AP_THRESHOLDS}
    per_class = {c: float(np.mean([table[t][c] for t in AP_THRESHOLDS])) for c in classes}
    return EvalReport(ap=ap, map_50_95=float(np.mean(list(ap.values()))), per_class=per_class, **extra)


def detect(params, scene, score_thr=0.05, nms_iou=0.6):
    """Inference: class-score ranking, thresholding and class-wise NMS."""
    pseudo = select_pseudo_boxes(forward(params, scene), SelectorConfig("class_score", score_thr, nms_iou))
    return pseudo.boxes, pseudo.classes, pseudo.scores


def evaluate_model(params, scenes, score_thr=0.05, nms_iou=0.6, **extra):
    dets = [detect(params, s, score_thr, nms_iou) for s in scenes]
    return evaluate_detections(dets, scenes, params.class_count, **extra)


def oracle_params(cfg, gain=40.0):
    """Head weights that invert the world's hidden feature map exactly.

    Only meaningful for a noise-free, decoy-free world; used to build the
    reference "oracle detector".
    """
    pinv = np.linalg.pinv(mixing_matrix(cfg))  # latent - center = pinv @ x
    mu = latent_center(cfg)
    c = cfg.class_count
    params = DetectorParams.zeros(c, cfg.feature_dim)
    g = gain / cfg.signal_gain
    params.W[:c] = g * pinv[:c]
    params.b[:c] = g * mu[:c] - 0.5 * gain
    params.W[c] = g * pinv[c + 5]
    params.b[c] = g * mu[c + 5] - 0.5 * gain
    params.W[c + 1:c + 5] = pinv[c + 1:c + 5]
    params.b[c + 1:c + 5] = mu[c + 1:c + 5]
    return params


class OracleMonitor:
    """Diagnostics that need hidden labels: pseudo-box quality and selection quality.

    The trainer hands it what it already computed; nothing flows back.
    """

    def step_diagnostics(self, scenes, unsup, cfg):
        matched = n_pred = n_truth = 0
        sel = ben = 0
        all_n = all_ben = 0
        for scene, pseudo, cand, mask in zip(scenes, unsup.pseudo, unsup.candidates, unsup.masks):
            t_boxes, t_cls = oracle_truth(scene)
            m, p, t = match_counts(pseudo, t_boxes, t_cls)
            matched, n_pred, n_truth = matched + m, n_pred + p, n_truth + t
            if len(cand) == 0:
                continue
            d_g = truth_distances(t_boxes, scene.grid_w, scene.grid_h, cand.location)
            n, b, _ = selection_counts(cand, mask, d_g)
            sel, ben = sel + n, ben + b
            n, b, _ = selection_counts(cand, np.ones_like(mask), d_g)
            all_n, all_ben = all_n + n, all_ben + b
        precision, recall = precision_recall(matched, n_pred, n_truth)
        return {
            "pseudo_precision": precision,
            "pseudo_recall": recall,
            "selected_beneficial": ben / sel if sel else 0.0,
            "selected_misleading": (sel - ben) / sel if sel else 0.0,
            "candidate_beneficial": all_ben / all_n if all_n else 0.0,
        }


def pseudo_quality(params, scenes, selector):
    """Micro-averaged pseudo-label precision/recall of ``params`` as teacher on ``scenes``."""
    matched = n_pred = n_truth = 0
    for scene in scenes:
        pseudo = select_pseudo_boxes(forward(params, scene), selector)
        m, p, t = match_counts(pseudo, *oracle_truth(scene))
        matched, n_pred, n_truth = matched + m, n_pred + p, n_truth + t
    return precision_recall(matched, n_pred, n_truth)

def assignment_quality(params, scenes, selector, strategy):
    """Pixel precision/recall/F1 of pseudo-box foreground under ``strategy``.

    The reference is the standard assignment of the true boxes. Counts are
    pooled over scenes before the ratios are taken.
    """
    hit = n_pred = n_true = 0
    standard = AssignmentStrategy()
    for scene in scenes:
        pseudo = select_pseudo_boxes(forward(params, scene), selector)
        pred = assign(pseudo.boxes, pseudo.classes, scene.grid_w, scene.grid_h, strategy)
        ref = assign(*oracle_truth(scene), scene.grid_w, scene.grid_h, standard)
        hit += int(np.count_nonzero(pred.foreground & ref.foreground))
        n_pred += int(pred.foreground.sum())
        n_true += int(ref.foreground.sum())
    precision = 1.0 if n_pred == 0 else hit / n_pred
    recall = 1.0 if n_true == 0 else hit / n_true
    return {"precision": precision, "recall": recall, "f1": pixel_f1(precision, recall)}


def selection_quality(teacher, student, scenes, selector, regime):
    """Beneficial/misleading split of the boundaries ``regime`` would train on, on clean views."""
    sel = ben = 0
    for scene in scenes:
        pseudo = select_pseudo_boxes(forward(teacher, scene), selector)
        cand = build_candidates(pseudo, forward(student, scene))
        if len(cand) == 0:
            continue
        d_g = truth_distances(oracle_truth(scene)[0], scene.grid_w, scene.grid_h, cand.location)
        n, b, _ = selection_counts(cand, regime_mask(cand, regime), d_g)
        sel, ben = sel + n, ben + b
    return {
        "n_selected": sel,
        "beneficial": ben / sel if sel else 0.0,
        "misleading": (sel - ben) / sel if sel else 0.0,
    }


def full_report(student, teacher, train_cfg, eval_scenes, pool_scenes, config_hash=None):
    """EvalReport of the evaluated model plus pseudo-label, assignment and selection diagnostics.

    ``teacher`` may be None (supervised run); the student then plays both roles.
    """
    model = teacher if teacher is not None else student
    pp = pr = None
    assign_q, select_q = {}, {}
    if pool_scenes:
        pp, pr = pseudo_quality(model, pool_scenes, train_cfg.selector)
        assign_q = assignment_quality(model, pool_scenes, train_cfg.selector, train_cfg.assignment)
        select_q = selection_quality(model, student, pool_scenes, train_cfg.selector, train_cfg.regime)
    return evaluate_model(model, eval_scenes, train_cfg.eval_score_thr, train_cfg.selector.nms_iou,
                          pseudo_precision=pp, pseudo_recall=pr, assignment=assign_q, selection=select_q,
                          config_hash=config_hash)


__all__ = [
    "AP_THRESHOLDS", "BREAKDOWN_THRESHOLDS", "EvalReport", "ap_breakdown", "ap_breakdown_scenes",
    "assignment_quality", "compute_ap", "compute_ap_scenes", "detect", "evaluate_detections",
    "evaluate_model", "full_report", "selection_quality",
    "interpolated_ap", "OracleMonitor", "oracle_params", "per_class_ap", "pseudo_quality",
]

"""Teacher-student training: supervised burn-in, then online pseudo-label mutual learning.

All randomness of iteration ``i`` of a stage comes from its own stream
``(seed, stage, i)``, so a run resumed from a checkpoint replays the exact
same batches and augmentations as an uninterrupted one.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .assignment import AssignmentStrategy, assign
from .detector import DetectorParams, decode_logits, head_logits, head_slices, param_gradient
from .evaluation import evaluate_model
from .listen2student import RegressionRegime, build_candidates, regime_mask, unsup_regression_loss
from .losses import classification_loss, stack_targets, supervised_head_loss
from .pseudolabel import SelectorConfig, select_pseudo_boxes
from .simworld import augment
from scipy.special import expit

log = logging.getLogger(__name__)

BURN_IN, MUTUAL = 10, 20


class DivergenceError(RuntimeError):
    """A loss became non-finite."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.005
    lambda_u: float = 3.0
    burn_in_iters: int = 3000
    mutual_iters: int = 2000
    batch_labeled: int = 8
    batch_unlabeled: int = 8
    ema_rate: float = 0.9996
    seed: int = 0
    eval_every: int = 0
    eval_score_thr: float = 0.05
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    assignment: AssignmentStrategy = field(default_factory=AssignmentStrategy)
    regime: RegressionRegime = field(default_factory=RegressionRegime)

    def validate(self):
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if not self.lambda_u >= 0:
            raise ValueError("lambda_u must be >= 0")
        if not 0.0 <= self.ema_rate < 1.0:
            raise ValueError("ema_rate must be in [0, 1)")
        for key in ("burn_in_iters", "mutual_iters", "eval_every"):
            if getattr(self, key) < 0:
                raise ValueError(f"{key} must be >= 0")
        for key in ("batch_labeled", "batch_unlabeled"):
            if getattr(self, key) <= 0:
                raise ValueError(f"{key} must be positive")
        return self


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    @property
    def label(self):
        if not self.records:
            return "empty"
        return "supervised" if all(r["stage"] == "burn_in" for r in self.records) else "semi-supervised"

    def append(self, record):
        if self.records and record["iteration"] <= self.records[-1]["iteration"]:
            raise ValueError("iteration index must increase")
        self.records.append(record)


@dataclass
class TrainState:
    student: DetectorParams
    teacher: DetectorParams
    iteration: int = 0  # completed steps over both stages

    def stage(self, cfg):
        return "burn_in" if self.iteration < cfg.burn_in_iters else "mutual"


def ema_update(teacher, student, alpha):
    """alpha * teacher + (1 - alpha) * student, elementwise."""
    if teacher.W.shape != student.W.shape:
        raise ValueError("teacher and student shapes differ")
    return DetectorParams(alpha * teacher.W + (1.0 - alpha) * student.W,
                          alpha * teacher.b + (1.0 - alpha) * student.b)


def _iter_rng(seed, stage, it):
    return np.random.default_rng([int(seed), stage, int(it)])


def _pick(rng, n, k):
    return np.sort(rng.choice(n, size=min(n, k), replace=False))


class _TargetCache:
    """Ground-truth targets of labeled scenes, computed once per strategy."""

    def __init__(self, scenes, strategy):
        self.targets = {s.id: assign(s.boxes, s.classes, s.grid_w, s.grid_h, strategy) for s in scenes}

    def __getitem__(self, scene):
        return self.targets[scene.id]


def _stack(scenes):
    return np.concatenate([s.features for s in scenes])


def supervised_step_terms(params, scenes, targets, eta=None):
    """Supervised loss values and flat gradient on an (already augmented) batch."""
    x = _stack(scenes)
    z = head_logits(params, x)
    l_cls, l_ctr, l_reg, parts = supervised_head_loss(z, stack_targets(targets), params.class_count, eta)
    dz = parts["cls"] + parts["ctr"] + parts["reg"]
    return {"l_cls": l_cls, "l_ctr": l_ctr, "l_reg": l_reg}, param_gradient(x, dz)


def _check_finite(values, dump):
    bad = {k: v for k, v in values.items() if not np.isfinite(v)}
    if bad:
        raise DivergenceError(f"non-finite loss {bad}", dump)


def _guarded(fn, dump, *args):
    """Run a loss evaluation, turning numeric blow-ups into DivergenceError."""
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        try:
            return fn(*args)
        except ValueError as exc:  # e.g. uncertainty underflowed to zero
            raise DivergenceError(str(exc), dump) from None


def burn_in_step(params, labeled, cache, cfg, it, world):
    rng = _iter_rng(cfg.seed, BURN_IN, it)
    idx = _pick(rng, len(labeled), cfg.batch_labeled)
    batch = [augment(labeled[i], "weak", rng, world) for i in idx]
    dump = {"iteration": it, "scene_ids": [s.id for s in batch]}
    losses, grad = _guarded(supervised_step_terms, dump, params, batch, [cache[s] for s in batch])
    _check_finite(losses, dump)
    new = DetectorParams.from_flat(params.flat() - cfg.lr * grad, params.class_count, params.feature_dim)
    return new, losses


def run_burn_in(cfg, labeled, world, params=None, log_records=None):
    """Plain SGD on the supervised loss for ``cfg.burn_in_iters`` steps."""
    if not labeled:
        raise ValueError("burn-in needs at least one labeled scene")
    if params is None:
        params = DetectorParams.zeros(world.class_count, world.feature_dim)
    cache = _TargetCache(labeled, cfg.assignment)
    for it in range(cfg.burn_in_iters):
        params, losses = burn_in_step(params, labeled, cache, cfg, it, world)
        if log_records is not None:
            log_records.append({"iteration": it, "stage": "burn_in", **losses})
    return params


@dataclass
class UnsupervisedTerms:
    l_cls: float
    l_reg: float
    dz: np.ndarray
    pseudo: list
    candidates: list
    masks: list
    n_candidate_locations: int


def unsupervised_terms(student, teacher, weak, strong, cfg, fixed_masks=None):
    """Pseudo-labels from the teacher on ``weak``; student losses on ``strong``.

    Returns the unweighted unsupervised losses and their d/d(student logits).
    ``fixed_masks`` overrides the per-scene boundary selection (for gradient checks).
    """
    c = student.class_count
    sl = head_slices(c)
    t_logits = head_logits(teacher, _stack(weak))
    z = head_logits(student, _stack(strong))
    n = weak[0].grid_w * weak[0].grid_h
    dz = np.zeros_like(z)

    pseudo, targets, cands, masks = [], [], [], []
    reg_loss = 0.0
    n_cand = 0
    reg_grads = []
    for k, (w, s) in enumerate(zip(weak, strong)):
        rows = slice(k * n, (k + 1) * n)
        t_pred = decode_logits(t_logits[rows], c, w.grid_w, w.grid_h)
        pb = select_pseudo_boxes(t_pred, cfg.selector)
        pseudo.append(pb)
        targets.append(assign(pb.boxes, pb.classes, s.grid_w, s.grid_h, cfg.assignment))
        s_pred = decode_logits(z[rows], c, s.grid_w, s.grid_h)
        cand = build_candidates(pb, s_pred)
        mask = regime_mask(cand, cfg.regime) if fixed_masks is None else fixed_masks[k]
        cands.append(cand)
        masks.append(mask)
        n_cand += len(cand)
        if len(cand):
            loss, g = unsup_regression_loss(cand.d_t, cand.d_s, mask)
            reg_loss += loss
            reg_grads.append((k * n + cand.location, g))

    l_cls, g_cls = classification_loss(z[:, sl["cls"]], stack_targets(targets))
    dz[:, sl["cls"]] = g_cls
    norm = max(n_cand, 1)
    for rows, g in reg_grads:
        dz[rows, sl["reg"]] += g * expit(z[rows, sl["reg"]]) / norm
    return UnsupervisedTerms(l_cls, reg_loss / norm, dz, pseudo, cands, masks, n_cand)


def mutual_learning_step(student, teacher, labeled_batch, labeled_targets, weak, strong, cfg):
    """One student SGD step on L_sup + lambda_u * L_unsup, then the EMA teacher update.

    ``labeled_batch`` / ``weak`` / ``strong`` are already augmented scenes.
    Returns ``(student', teacher', record, unsup_terms)``.
    """
    dump = {"labeled_ids": [s.id for s in labeled_batch], "unlabeled_ids": [s.id for s in weak]}
    sup, g_sup = _guarded(supervised_step_terms, dump, student, labeled_batch, labeled_targets)
    un = _guarded(unsupervised_terms, dump, student, teacher, weak, strong, cfg)
    g_un = param_gradient(_stack(strong), un.dz)
    record = {**sup, "l_unsup_cls": un.l_cls, "l_unsup_reg": un.l_reg}
    _check_finite(record, dump)
    grad = g_sup + cfg.lambda_u * g_un
    new_student = DetectorParams.from_flat(student.flat() - cfg.lr * grad, student.class_count, student.feature_dim)
    new_teacher = ema_update(teacher, new_student, cfg.ema_rate)
    record.update({
        "n_pseudo": int(sum(len(p) for p in un.pseudo)),
        "n_candidates": int(4 * un.n_candidate_locations),
        "n_selected": int(sum(int(m.sum()) for m in un.masks)),
    })
    return new_student, new_teacher, record, un


def mutual_objective(student, teacher, labeled_batch, labeled_targets, weak, strong, cfg, eta=None, masks=None):
    """Scalar L_sup + lambda_u * L_unsup and its gradient.

    Used for gradient checks, which pass the IoU weights ``eta`` and the
    boundary ``masks`` of the base state so the objective is smooth.
    """
    sup, g_sup = supervised_step_terms(student, labeled_batch, labeled_targets, eta)
    un = unsupervised_terms(student, teacher, weak, strong, cfg, masks)
    value = sup["l_cls"] + sup["l_ctr"] + sup["l_reg"] + cfg.lambda_u * (un.l_cls + un.l_reg)
    return value, g_sup + cfg.lambda_u * param_gradient(_stack(strong), un.dz)


def _mutual_batches(split, cache, cfg, it, world):
    rng = _iter_rng(cfg.seed, MUTUAL, it)
    lab = [augment(split.labeled[i], "weak", rng, world) for i in _pick(rng, len(split.labeled), cfg.batch_labeled)]
    idx = _pick(rng, len(split.unlabeled), cfg.batch_unlabeled)
    weak = [augment(split.unlabeled[i], "weak", rng, world) for i in idx]
    strong = [augment(split.unlabeled[i], "strong", rng, world) for i in idx]
    return lab, [cache[s] for s in lab], weak, strong


def run_experiment(cfg, split, world, state=None, log=None, monitor=None, eval_scenes=None,
                   stop_at=None, on_checkpoint=None):
    """Burn-in followed by ``cfg.mutual_iters`` mutual-learning steps.

    ``state`` resumes a previous run. ``monitor`` (an oracle-side observer,
    see :class:`semidet.evaluation.OracleMonitor`) may add diagnostics to
    each record; it never influences training. ``stop_at`` halts after that
    many completed steps (for checkpoint/resume).
    """
    cfg.validate()
    if not split.labeled:
        raise ValueError("need at least one labeled scene")
    log = TrainLog() if log is None else log
    if state is None:
        state = TrainState(DetectorParams.zeros(world.class_count, world.feature_dim), None, 0)
    cache = _TargetCache(split.labeled, cfg.assignment)
    total = cfg.burn_in_iters + (cfg.mutual_iters if split.unlabeled else 0)
    end = total if stop_at is None else min(stop_at, total)

    while state.iteration < end:
        it = state.iteration
        if it < cfg.burn_in_iters:
            student, losses = burn_in_step(state.student, split.labeled, cache, cfg, it, world)
            record = {"iteration": it, "stage": "burn_in", **losses}
            teacher = None
            if it + 1 == cfg.burn_in_iters:
                teacher = student.copy()
            state = TrainState(student, teacher, it + 1)
        else:
            if state.teacher is None:
                state.teacher = state.student.copy()
            m = it - cfg.burn_in_iters
            lab, lab_t, weak, strong = _mutual_batches(split, cache, cfg, m, world)
            student, teacher, rec, un = mutual_learning_step(state.student, state.teacher, lab, lab_t,
                                                             weak, strong, cfg)
            record = {"iteration": it, "stage": "mutual", **rec}
            if monitor is not None:
                record.update(monitor.step_diagnostics(weak, un, cfg))
            state = TrainState(student, teacher, it + 1)
        log.append(record)
        if cfg.eval_every and eval_scenes and state.iteration % cfg.eval_every == 0:
            log.snapshots.append(_snapshot(state, eval_scenes, cfg))
        if on_checkpoint is not None:
            on_checkpoint(state)

    if state.teacher is None and state.iteration >= cfg.burn_in_iters:
        state.teacher = state.student.copy()
    return log, state


def final_model(state):
    """The model that is evaluated: the teacher once mutual learning started, else the student."""
    return state.teacher if state.teacher is not None else state.student


def _snapshot(state, scenes, cfg):
    rep = evaluate_model(final_model(state), scenes, score_thr=cfg.eval_score_thr, nms_iou=cfg.selector.nms_iou)
    return {"iteration": state.iteration, "map_50_95": rep.map_50_95,
            "ap": {f"{t:.2f}": v for t, v in rep.ap.items()}}

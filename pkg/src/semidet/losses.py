"""Training objectives with closed-form gradients.

Every loss returns its value and the gradient with respect to the head
outputs it consumes; :func:`combined_supervised_loss` chains those back to
the flat parameter vector.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .assignment import LocationTargets
from .detector import head_logits, head_slices, param_gradient, softplus
from .geometry import iou

EPS = 1e-7
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class LossBundle:
    l_cls: float
    l_ctr: float
    l_reg: float
    grad: np.ndarray
    parts: dict = field(default_factory=dict)

    @property
    def total(self):
        return self.l_cls + self.l_ctr + self.l_reg


def _bce(p, y):
    pc = np.clip(p, EPS, 1.0 - EPS)
    inside = (p > EPS) & (p < 1.0 - EPS)
    loss = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    return loss, inside


def classification_loss(logits, targets, normalizer=None):
    """Per-class sigmoid BCE summed over classes, averaged over locations.

    Foreground locations are weighted by ``targets.soft_weight``; background
    pushes every class toward 0. Probabilities are clamped to
    ``[1e-7, 1 - 1e-7]`` and the gradient is that of the clamped loss.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n, c = logits.shape
    y = np.zeros((n, c))
    fg = targets.cls >= 0
    y[np.flatnonzero(fg), targets.cls[fg]] = 1.0
    w = np.where(fg, targets.soft_weight, 1.0)[:, None]
    p = expit(logits)
    loss, inside = _bce(p, y)
    norm = float(n if normalizer is None else normalizer)
    if norm == 0:
        return 0.0, np.zeros_like(logits)
    value = float(np.sum(w * loss) / norm)
    grad = w * (p - y) * inside / norm
    return value, grad


def centerness_loss(logits, targets):
    """BCE between predicted and target centerness over foreground locations only."""
    logits = np.asarray(logits, dtype=np.float64)
    fg = targets.cls >= 0
    grad = np.zeros_like(logits)
    n_fg = int(fg.sum())
    if n_fg == 0:
        return 0.0, grad
    p = expit(logits[fg])
    t = targets.ctr[fg]
    loss, inside = _bce(p, t)
    grad[fg] = (p - t) * inside / n_fg
    return float(loss.sum() / n_fg), grad


def npll_regression_loss(d_s, delta_s, d_g, eta):
    """Uncertainty-weighted regression loss, summed over instances.

    Per instance: eta * (sum_k [(d_s - d_g)^2 / (2 delta^2) + log(delta^2) / 2] + 2 log(2 pi)).
    ``eta`` is a constant weight (no gradient flows through it).
    Returns ``(loss, dL/dd_s, dL/ddelta_s)``.
    """
    d_s = np.atleast_2d(np.asarray(d_s, dtype=np.float64))
    delta_s = np.atleast_2d(np.asarray(delta_s, dtype=np.float64))
    d_g = np.atleast_2d(np.asarray(d_g, dtype=np.float64))
    eta = np.reshape(np.asarray(eta, dtype=np.float64), (-1, 1))
    if np.any(delta_s <= 0):
        raise ValueError("uncertainty must be positive")
    e = d_s - d_g
    var = delta_s ** 2
    per = np.sum(e ** 2 / (2.0 * var) + 0.5 * np.log(var), axis=1) + 2.0 * LOG_2PI
    loss = float(np.sum(eta[:, 0] * per))
    grad_d = eta * e / var
    grad_delta = eta * (-(e ** 2) / delta_s ** 3 + 1.0 / delta_s)
    return loss, grad_d, grad_delta


def regression_iou_weight(d_s, d_g):
    """IoU between boxes decoded from predicted and target distances at the same location."""
    # both boxes share the anchor point, so decode at the origin
    zero = np.zeros(d_s.shape[:-1] + (2,))
    a = np.stack([zero[..., 0] - d_s[..., 0], zero[..., 1] - d_s[..., 1], d_s[..., 2], d_s[..., 3]], axis=-1)
    b = np.stack([zero[..., 0] - d_g[..., 0], zero[..., 1] - d_g[..., 1], d_g[..., 2], d_g[..., 3]], axis=-1)
    return np.asarray(iou(a, b), dtype=np.float64)


def supervised_head_loss(z, targets, c, eta=None):
    """Sum of classification, centerness and NPLL losses for stacked head outputs ``z``.

    Returns ``(l_cls, l_ctr, l_reg, dz_parts)`` where ``dz_parts`` maps each
    component to its d(loss)/d(z). NPLL is averaged over foreground locations.
    """
    s = head_slices(c)
    parts = {k: np.zeros_like(z) for k in ("cls", "ctr", "reg")}
    l_cls, g = classification_loss(z[:, s["cls"]], targets)
    parts["cls"][:, s["cls"]] = g
    l_ctr, g = centerness_loss(z[:, s["ctr"]], targets)
    parts["ctr"][:, s["ctr"]] = g

    fg = np.flatnonzero(targets.cls >= 0)
    l_reg = 0.0
    if fg.size:
        zr = z[fg, s["reg"]]
        zu = z[fg, s["unc"]]
        d_s = softplus(zr)
        delta = np.exp(0.5 * zu)
        d_g = targets.reg[fg]
        if eta is None:
            eta = regression_iou_weight(d_s, d_g)
        loss, gd, gdelta = npll_regression_loss(d_s, delta, d_g, eta)
        l_reg = loss / fg.size
        parts["reg"][fg, s["reg"]] = gd * expit(zr) / fg.size
        parts["reg"][fg, s["unc"]] = gdelta * 0.5 * delta / fg.size
    return l_cls, l_ctr, l_reg, parts


def stack_targets(targets_list):
    """Concatenate per-scene targets into one batch-level target set."""
    return LocationTargets(
        cls=np.concatenate([t.cls for t in targets_list]),
        soft_weight=np.concatenate([t.soft_weight for t in targets_list]),
        reg=np.concatenate([t.reg for t in targets_list]),
        ctr=np.concatenate([t.ctr for t in targets_list]),
        owner=np.concatenate([t.owner for t in targets_list]),
    )


def combined_supervised_loss(scenes, params, targets, eta=None):
    """Supervised loss of a batch of scenes with unit component weights.

    ``scenes`` and ``targets`` may be single objects or aligned lists.
    Pass ``eta`` to hold the IoU weights fixed (e.g. for gradient checks).
    """
    if not isinstance(scenes, (list, tuple)):
        scenes, targets = [scenes], [targets]
    x = np.concatenate([sc.features for sc in scenes])
    tg = stack_targets(targets)
    z = head_logits(params, x)
    l_cls, l_ctr, l_reg, parts = supervised_head_loss(z, tg, params.class_count, eta)
    grads = {k: param_gradient(x, v) for k, v in parts.items()}
    return LossBundle(l_cls, l_ctr, l_reg, grads["cls"] + grads["ctr"] + grads["reg"], grads)


def batch_eta(scenes, params, targets):
    """IoU weights the NPLL term would use at ``params`` (for freezing them)."""
    if not isinstance(scenes, (list, tuple)):
        scenes, targets = [scenes], [targets]
    x = np.concatenate([sc.features for sc in scenes])
    tg = stack_targets(targets)
    z = head_logits(params, x)
    fg = tg.cls >= 0
    d_s = softplus(z[fg, head_slices(params.class_count)["reg"]])
    return regression_iou_weight(d_s, tg.reg[fg])


__all__ = [
    "LossBundle", "batch_eta", "centerness_loss", "classification_loss", "combined_supervised_loss",
    "npll_regression_loss", "regression_iou_weight", "stack_targets",
    "supervised_head_loss",
]

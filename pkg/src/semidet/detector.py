"""Linear dense detector head.

One weight matrix ``W`` of shape ``(C + 9, F)`` and bias ``b`` of shape
``(C + 9,)``. Output rows, in order: ``C`` class logits, one centerness logit,
four pre-softplus boundary distances, four log-variances ``u = log delta^2``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .pseudolabel import DensePrediction


def head_slices(c):
    return {
        "cls": slice(0, c),
        "ctr": c,
        "reg": slice(c + 1, c + 5),
        "unc": slice(c + 5, c + 9),
    }


@dataclass
class DetectorParams:
    W: np.ndarray
    b: np.ndarray

    @property
    def class_count(self):
        return self.W.shape[0] - 9

    @property
    def feature_dim(self):
        return self.W.shape[1]

    @property
    def size(self):
        return self.W.size + self.b.size

    @classmethod
    def zeros(cls, class_count, feature_dim):
        k = class_count + 9
        return cls(np.zeros((k, feature_dim)), np.zeros(k))

    @classmethod
    def from_flat(cls, flat, class_count, feature_dim):
        flat = np.asarray(flat, dtype=np.float64)
        k = class_count + 9
        if flat.size != k * (feature_dim + 1):
            raise ValueError(f"expected {k * (feature_dim + 1)} parameters, got {flat.size}")
        return cls(flat[:k * feature_dim].reshape(k, feature_dim).copy(), flat[k * feature_dim:].copy())

    def flat(self):
        return np.concatenate([self.W.ravel(), self.b])

    def copy(self):
        return DetectorParams(self.W.copy(), self.b.copy())

    def check_finite(self):
        return bool(np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b)))


def softplus(z):
    return np.logaddexp(0.0, z)


def head_logits(params, features):
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != params.feature_dim:
        raise ValueError(f"feature dim {features.shape[-1]} does not match head dim {params.feature_dim}")
    return features @ params.W.T + params.b


def decode_logits(z, c, grid_w, grid_h):
    s = head_slices(c)
    return DensePrediction(
        probs=expit(z[:, s["cls"]]),
        ctr=expit(z[:, s["ctr"]]),
        dist=softplus(z[:, s["reg"]]),
        delta=np.exp(0.5 * z[:, s["unc"]]),
        grid_w=grid_w,
        grid_h=grid_h,
        logits=z,
    )


def forward(params, scene):
    """Dense prediction of one scene."""
    z = head_logits(params, scene.features)
    return decode_logits(z, params.class_count, scene.grid_w, scene.grid_h)


def param_gradient(features, dz):
    """Flat parameter gradient from d(loss)/d(logits) of shape ``(n, C + 9)``."""
    return np.concatenate([(dz.T @ features).ravel(), dz.sum(axis=0)])

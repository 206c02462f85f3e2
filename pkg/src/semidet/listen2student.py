"""Boundary-level selection of regression pseudo-labels by relative uncertainty.

A boundary of a pseudo-box supervises the student at a location only when
the teacher is more certain than the student there, by a margin ``sigma``,
and the student is not already confident (``delta_s > sigma_s``).
"""

from dataclasses import dataclass

import numpy as np

from .assignment import assign

REGIMES = ("none", "confidence_l1", "listen2student")
CONFIG_NAMES = {"none": "none", "confidence-l1": "confidence_l1", "listen2student": "listen2student"}
BOUNDARIES = ("l", "t", "r", "b")


@dataclass(frozen=True)
class RegressionRegime:
    kind: str = "listen2student"
    sigma: float = 0.1
    sigma_s: float = 0.5

    def __post_init__(self):
        if self.kind not in REGIMES:
            raise ValueError(f"unknown regression regime {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    @classmethod
    def from_config(cls, name, sigma=0.1, sigma_s=0.5):
        if name not in CONFIG_NAMES:
            raise ValueError(f"reg_loss must be one of {sorted(CONFIG_NAMES)}, got {name!r}")
        return cls(CONFIG_NAMES[name], sigma, sigma_s)


@dataclass
class BoundaryCandidates:
    """Teacher/student boundary pairs at pseudo-box foreground locations.

    Arrays of shape ``(n, 4)`` hold one row per location and one column per
    boundary; ``location`` gives the location index within its scene.
    """

    d_t: np.ndarray
    d_s: np.ndarray
    delta_t: np.ndarray
    delta_s: np.ndarray
    location: np.ndarray

    def __len__(self):
        return len(self.location)

    @classmethod
    def empty(cls):
        z = np.zeros((0, 4))
        return cls(z, z.copy(), z.copy(), z.copy(), np.zeros(0, np.int64))


def is_beneficial(d_t, d_s, d_g):
    """Teacher no farther from the truth than the student (inclusive)."""
    return np.abs(np.asarray(d_t) - d_g) <= np.abs(np.asarray(d_s) - d_g)


def classify_instance(d_t, d_s, d_g):
    return "beneficial" if bool(is_beneficial(d_t, d_s, d_g)) else "misleading"


def select_boundaries(delta_t, delta_s, sigma=0.1, sigma_s=0.5):
    """Keep mask: ``delta_s > sigma_s`` and ``delta_t + sigma <= delta_s``, elementwise."""
    delta_t = np.asarray(delta_t, dtype=np.float64)
    delta_s = np.asarray(delta_s, dtype=np.float64)
    return (delta_s > sigma_s) & (delta_t + sigma <= delta_s)


def regime_mask(cands, regime):
    if regime.kind == "none":
        return np.zeros(cands.d_s.shape, dtype=bool)
    if regime.kind == "confidence_l1":
        return np.ones(cands.d_s.shape, dtype=bool)
    return select_boundaries(cands.delta_t, cands.delta_s, regime.sigma, regime.sigma_s)


def unsup_regression_loss(d_t, d_s, mask):
    """Summed L1 between teacher and student over masked boundaries.

    Teacher values are constants. The gradient with respect to ``d_s`` is
    ``sign(d_s - d_t)`` on masked entries, with sign(0) = 0.
    """
    d_t = np.asarray(d_t, dtype=np.float64)
    d_s = np.asarray(d_s, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    diff = np.where(mask, d_s - d_t, 0.0)
    return float(np.sum(np.abs(diff))), np.sign(diff)


def build_candidates(pseudo, student_pred):
    """Pair every boundary of every pseudo-box with the student at its foreground locations.

    Locations come from standard assignment of the pseudo-boxes; the teacher
    target at a location is the pseudo-box re-encoded there, carrying the
    pseudo-box's per-boundary uncertainty.
    """
    if len(pseudo) == 0:
        return BoundaryCandidates.empty()
    tg = assign(pseudo.boxes, pseudo.classes, student_pred.grid_w, student_pred.grid_h)
    loc = np.flatnonzero(tg.owner >= 0)
    owner = tg.owner[loc]
    return BoundaryCandidates(
        d_t=tg.reg[loc],
        d_s=student_pred.dist[loc],
        delta_t=pseudo.delta[owner],
        delta_s=student_pred.delta[loc],
        location=loc,
    )


def truth_distances(truth_boxes, grid_w, grid_h, location):
    """Oracle distances at ``location`` w.r.t. the standard-assigned true box; NaN where background."""
    tg = assign(truth_boxes, np.zeros(len(np.reshape(truth_boxes, (-1, 4))), np.int64), grid_w, grid_h)
    return tg.reg[location]


def selection_counts(cands, mask, d_g):
    """``(n_selected, n_beneficial, n_misleading)`` among masked boundaries with a defined truth."""
    valid = mask & np.isfinite(d_g)
    ben = is_beneficial(cands.d_t, cands.d_s, np.nan_to_num(d_g)) & valid
    n = int(valid.sum())
    return n, int(ben.sum()), n - int(ben.sum())


def selection_diagnostics(cands, sigma, sigma_s, d_g):
    """Beneficial and misleading fractions among boundaries kept by :func:`select_boundaries`.

    Both are 0 when nothing is selected.
    """
    mask = select_boundaries(cands.delta_t, cands.delta_s, sigma, sigma_s)
    n, ben, mis = selection_counts(cands, mask, np.asarray(d_g, dtype=np.float64))
    if n == 0:
        return 0.0, 0.0
    return ben / n, mis / n


__all__ = [
    "BOUNDARIES", "BoundaryCandidates", "RegressionRegime", "build_candidates", "classify_instance",
    "is_beneficial", "regime_mask", "select_boundaries", "selection_counts",
    "selection_diagnostics", "truth_distances", "unsup_regression_loss",
]

"""Dense label assignment: boxes -> per-location classification/regression targets."""

from dataclasses import dataclass

import numpy as np

from .geometry import centerness, grid_locations
from ._kernels import assign_locations

KINDS = ("standard", "center_sampling", "soft_localization")
CONFIG_NAMES = {"standard": "standard", "center-sampling": "center_sampling", "soft": "soft_localization"}


@dataclass(frozen=True)
class AssignmentStrategy:
    kind: str = "standard"
    cs_radius: float = 1.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown assignment kind {self.kind!r}")
        if not self.cs_radius > 0:
            raise ValueError("cs_radius must be positive")

    @classmethod
    def from_config(cls, name, cs_radius=1.5):
        if name not in CONFIG_NAMES:
            raise ValueError(f"assignment must be one of {sorted(CONFIG_NAMES)}, got {name!r}")
        return cls(CONFIG_NAMES[name], cs_radius)


@dataclass
class LocationTargets:
    """Per-location targets; ``cls == -1`` marks background.

    ``reg`` and ``ctr`` are NaN at background locations.
    """

    cls: np.ndarray
    soft_weight: np.ndarray
    reg: np.ndarray
    ctr: np.ndarray
    owner: np.ndarray

    @property
    def foreground(self):
        return self.cls >= 0

    def __len__(self):
        return len(self.cls)


def assign(boxes, classes, grid_w, grid_h, strategy=AssignmentStrategy()):
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    classes = np.asarray(classes, dtype=np.int64).reshape(-1)
    locs = grid_locations(grid_w, grid_h)
    n = len(locs)
    radius = strategy.cs_radius if strategy.kind == "center_sampling" else 0.0
    owner = assign_locations(locs[:, 0], locs[:, 1], boxes, radius)
    fg = owner >= 0

    cls = np.full(n, -1, dtype=np.int64)
    weight = np.ones(n)
    reg = np.full((n, 4), np.nan)
    ctr = np.full(n, np.nan)
    if fg.any():
        b = boxes[owner[fg]]
        p = locs[fg]
        d = np.stack([p[:, 0] - b[:, 0], p[:, 1] - b[:, 1], b[:, 2] - p[:, 0], b[:, 3] - p[:, 1]], axis=1)
        cls[fg] = classes[owner[fg]]
        reg[fg] = d
        ctr[fg] = centerness(d)
        if strategy.kind == "soft_localization":
            weight[fg] = ctr[fg]
    return LocationTargets(cls=cls, soft_weight=weight, reg=reg, ctr=ctr, owner=owner)


def _safe_ratio(num, den):
    return 1.0 if den == 0 else num / den


def assignment_metrics(pred, oracle):
    """Pixel precision and recall of ``pred``'s foreground against ``oracle``'s."""
    if len(pred) != len(oracle):
        raise ValueError("targets come from different grid sizes")
    p = pred.foreground
    o = oracle.foreground
    hit = int(np.count_nonzero(p & o))
    return _safe_ratio(hit, int(p.sum())), _safe_ratio(hit, int(o.sum()))


def pixel_f1(precision, recall):
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)

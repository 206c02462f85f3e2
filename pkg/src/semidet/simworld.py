"""Deterministic synthetic detection scenes.

A scene is a ``grid_h x grid_w`` lattice of locations. Every location carries a
feature vector that is a hidden linear image of its dense detection targets
(class one-hot or background flag, pre-activation boundary distances,
centerness, per-boundary edge-noise level) plus noise, so that a linear head
can in principle invert it. Targets are centered on a fixed reference mean
before mixing.

Three noise sources all scale with ``feature_noise_std``:

* i.i.d. per-location feature noise;
* a per-object appearance offset shared by all locations of one object;
* boundary-distance noise whose scale grows with the distance to that edge
  (far edges are harder to localize). The log of that scale is itself visible
  in the features, which is what a localization-uncertainty head can learn.

Background also contains decoys: object-shaped clutter with only partial class
evidence. They are background in the ground truth.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import grid_locations
from ._kernels import assign_locations

EDGE_REF_DIST = 4.0
N_REFERENCE_SCENES = 32
MIN_NOISY_DIST = 0.05


class HiddenLabelError(RuntimeError):
    """Raised when code reads the ground truth of an unlabeled scene."""


@dataclass(frozen=True)
class WorldConfig:
    grid_w: int = 16
    grid_h: int = 16
    feature_dim: int = 24
    class_count: int = 3
    min_boxes: int = 1
    max_boxes: int = 4
    min_box_size: float = 4.0
    max_box_size: float = 9.0
    n_scenes: int = 500
    n_test: int = 200
    label_fraction: float = 0.04
    feature_noise_std: float = 0.15
    signal_gain: float = 3.0
    appearance_std: float = 1.0
    edge_noise_scale: float = 0.5
    edge_noise_power: float = 1.0
    edge_noise_jitter: float = 0.3
    min_decoys: int = 0
    max_decoys: int = 2
    decoy_strength: float = 0.85
    decoy_centerness: float = 1.5
    aug_weak_std: float = 0.05
    aug_strong_std: float = 0.1
    p_drop: float = 0.05
    generator_seed: int = 0

    def validate(self):
        positive = ("grid_w", "grid_h", "feature_dim", "class_count", "n_scenes")
        for key in positive:
            if getattr(self, key) <= 0:
                raise ValueError(f"{key} must be positive")
        if self.feature_dim < self.latent_dim:
            raise ValueError(f"feature_dim must be >= {self.latent_dim} for class_count={self.class_count}")
        if not 0 <= self.min_boxes <= self.max_boxes:
            raise ValueError("boxes_per_scene range must satisfy 0 <= min_boxes <= max_boxes")
        if not 0 <= self.min_decoys <= self.max_decoys:
            raise ValueError("decoy range must satisfy 0 <= min_decoys <= max_decoys")
        if not 1.0 <= self.min_box_size <= self.max_box_size <= min(self.grid_w, self.grid_h):
            raise ValueError("box size range must satisfy 1 <= min_box_size <= max_box_size <= grid size")
        if not 0.0 < self.label_fraction <= 1.0:
            raise ValueError("label_fraction must be in (0, 1]")
        if self.n_test < 0:
            raise ValueError("n_test must be nonnegative")
        if self.generator_seed < 0:
            raise ValueError("seed must be nonnegative")
        if not 0.0 <= self.p_drop <= 1.0:
            raise ValueError("p_drop must be in [0, 1]")
        if not self.signal_gain > 0:
            raise ValueError("signal_gain must be positive")
        if not self.decoy_centerness >= 0:
            raise ValueError("decoy_centerness must be nonnegative")
        if not 0.0 <= self.decoy_strength <= 1.0:
            raise ValueError("decoy_strength must be in [0, 1]")
        for key in ("feature_noise_std", "appearance_std", "edge_noise_scale", "edge_noise_jitter",
                    "aug_weak_std", "aug_strong_std"):
            if getattr(self, key) < 0:
                raise ValueError(f"{key} must be nonnegative")
        return self

    @property
    def latent_dim(self):
        return self.class_count + 10

    @property
    def n_locations(self):
        return self.grid_w * self.grid_h


class Scene:
    """One synthetic image: dense features plus (possibly hidden) ground truth."""

    def __init__(self, id, grid_w, grid_h, features, boxes, classes, labeled=True):
        self.id = int(id)
        self.grid_w = int(grid_w)
        self.grid_h = int(grid_h)
        self.features = np.asarray(features, dtype=np.float64)
        self._boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        self._classes = np.asarray(classes, dtype=np.int64).reshape(-1)
        self.labeled = bool(labeled)
        if self.features.shape[0] != self.grid_w * self.grid_h:
            raise ValueError("need exactly grid_w * grid_h feature vectors")

    @property
    def boxes(self):
        if not self.labeled:
            raise HiddenLabelError(f"scene {self.id} is unlabeled")
        return self._boxes

    @property
    def classes(self):
        if not self.labeled:
            raise HiddenLabelError(f"scene {self.id} is unlabeled")
        return self._classes

    def with_features(self, features):
        return Scene(self.id, self.grid_w, self.grid_h, features, self._boxes, self._classes, self.labeled)

    def hidden(self):
        return Scene(self.id, self.grid_w, self.grid_h, self.features, self._boxes, self._classes, False)

    def __repr__(self):
        state = "labeled" if self.labeled else "hidden"
        return f"Scene(id={self.id}, {self.grid_w}x{self.grid_h}, {len(self._boxes)} boxes, {state})"


def oracle_truth(scene):
    """Ground truth regardless of visibility. Evaluation code only."""
    return scene._boxes, scene._classes


@dataclass
class DatasetSplit:
    labeled: list
    unlabeled: list
    seed: int
    test: list = None


@lru_cache(maxsize=32)
def mixing_matrix(cfg):
    """Hidden ``(feature_dim, latent_dim)`` map from dense targets to features."""
    rng = np.random.default_rng([cfg.generator_seed, 0])
    a = rng.normal(size=(cfg.feature_dim, cfg.latent_dim))
    a /= np.linalg.norm(a, axis=0, keepdims=True)
    a.setflags(write=False)
    return a


def _inv_softplus(d):
    return d + np.log(-np.expm1(-d))


def _place_boxes(cfg, rng, n):
    w = rng.uniform(cfg.min_box_size, cfg.max_box_size, size=n)
    h = rng.uniform(cfg.min_box_size, cfg.max_box_size, size=n)
    x1 = rng.uniform(0.0, cfg.grid_w - w)
    y1 = rng.uniform(0.0, cfg.grid_h - h)
    return np.stack([x1, y1, x1 + w, y1 + h], axis=1)


def _geometry_latents(cfg, rng, boxes, idx, locs, noise):
    """Distance, centerness and edge-noise channels for locations assigned to ``boxes[idx]``."""
    b = boxes[idx]
    d = np.stack([locs[:, 0] - b[:, 0], locs[:, 1] - b[:, 1], b[:, 2] - locs[:, 0], b[:, 3] - locs[:, 1]], axis=1)
    lr = np.minimum(d[:, 0], d[:, 2]) / np.maximum(d[:, 0], d[:, 2])
    tb = np.minimum(d[:, 1], d[:, 3]) / np.maximum(d[:, 1], d[:, 3])
    ctr = np.sqrt(lr * tb)
    jitter = rng.normal(0.0, cfg.edge_noise_jitter, size=(len(boxes), 4))[idx]
    log_scale = np.log(cfg.edge_noise_scale + 1e-12) + cfg.edge_noise_power * np.log(d / EDGE_REF_DIST) + jitter
    scale = np.exp(log_scale)
    noisy = d + noise * scale * rng.normal(size=d.shape)
    noisy = np.maximum(noisy, np.minimum(d, MIN_NOISY_DIST))
    return _inv_softplus(noisy), ctr, log_scale


def _draw_latent(cfg, rng):
    """Dense targets, per-object appearance offsets and boxes for one scene."""
    c = cfg.class_count
    locs = grid_locations(cfg.grid_w, cfg.grid_h)
    n = len(locs)
    n_boxes = int(rng.integers(cfg.min_boxes, cfg.max_boxes + 1))
    n_decoys = int(rng.integers(cfg.min_decoys, cfg.max_decoys + 1))
    boxes = _place_boxes(cfg, rng, n_boxes)
    classes = rng.integers(0, c, size=n_boxes)
    decoys = _place_boxes(cfg, rng, n_decoys)
    decoy_classes = rng.integers(0, c, size=n_decoys)

    latent = np.zeros((n, cfg.latent_dim))
    latent[:, c] = cfg.signal_gain
    sigma = cfg.feature_noise_std
    appearance = np.zeros((n, cfg.feature_dim))

    owner = assign_locations(locs[:, 0], locs[:, 1], boxes)
    fg = owner >= 0
    decoy_owner = assign_locations(locs[:, 0], locs[:, 1], decoys)
    dec = (decoy_owner >= 0) & ~fg

    if fg.any():
        i = owner[fg]
        latent[fg, c] = 0.0
        latent[fg, classes[i]] = cfg.signal_gain
        dist, ctr, log_scale = _geometry_latents(cfg, rng, boxes, i, locs[fg], sigma)
        latent[fg, c + 1:c + 5] = dist
        latent[fg, c + 5] = cfg.signal_gain * ctr
        latent[fg, c + 6:c + 10] = log_scale
        look = rng.normal(0.0, sigma * cfg.appearance_std, size=(n_boxes, cfg.feature_dim))
        appearance[fg] = look[i]
    if dec.any():
        i = decoy_owner[dec]
        latent[dec, c] = cfg.signal_gain * (1.0 - cfg.decoy_strength)
        latent[dec, decoy_classes[i]] = cfg.signal_gain * cfg.decoy_strength
        dist, _, log_scale = _geometry_latents(cfg, rng, decoys, i, locs[dec], sigma)
        latent[dec, c + 1:c + 5] = dist
        latent[dec, c + 5] = cfg.signal_gain * cfg.decoy_centerness
        latent[dec, c + 6:c + 10] = log_scale
        look = rng.normal(0.0, sigma * cfg.appearance_std, size=(n_decoys, cfg.feature_dim))
        appearance[dec] = look[i]

    return latent, appearance, boxes, classes


@lru_cache(maxsize=32)
def latent_center(cfg):
    """Mean latent over a reference sample drawn on its own stream.

    Subtracting it gives features with (near) zero mean, the way a normalized
    backbone would. A linear head on raw features sees a large common
    component, which makes plain gradient steps badly conditioned.
    """
    rows = [_draw_latent(cfg, scene_rng(cfg.generator_seed, i, stream=3))[0] for i in range(N_REFERENCE_SCENES)]
    mu = np.concatenate(rows).mean(axis=0)
    mu.setflags(write=False)
    return mu


def generate_scene(cfg, rng, scene_id=0):
    """Draw one scene from ``rng`` (a ``numpy.random.Generator``)."""
    latent, appearance, boxes, classes = _draw_latent(cfg, rng)
    noise = rng.normal(0.0, cfg.feature_noise_std, size=appearance.shape)
    features = (latent - latent_center(cfg)) @ mixing_matrix(cfg).T + appearance + noise
    return Scene(scene_id, cfg.grid_w, cfg.grid_h, features, boxes, classes, labeled=True)


def scene_rng(seed, index, stream=1):
    return np.random.default_rng([int(seed), int(stream), int(index)])


def generate_scenes(cfg, n=None, start=0):
    """Scenes ``start .. start+n-1``; each draws from its own ``(seed, index)`` stream."""
    n = cfg.n_scenes if n is None else n
    return [generate_scene(cfg, scene_rng(cfg.generator_seed, i), scene_id=i) for i in range(start, start + n)]


def generate_test_scenes(cfg):
    return generate_scenes(cfg, n=cfg.n_test, start=cfg.n_scenes)


def split_dataset(scenes, label_fraction, seed):
    """Shuffle by ``seed``; the first ``floor(n * label_fraction)`` scenes keep their labels."""
    if not 0.0 < label_fraction <= 1.0:
        raise ValueError("label_fraction must be in (0, 1]")
    n = len(scenes)
    n_labeled = math.floor(n * label_fraction + 1e-9)
    if n_labeled == 0:
        raise ValueError(f"label_fraction={label_fraction} leaves no labeled scenes out of {n}")
    order = np.random.default_rng([int(seed), 2]).permutation(n)
    labeled = sorted((scenes[i] for i in order[:n_labeled]), key=lambda s: s.id)
    unlabeled = sorted((scenes[i].hidden() for i in order[n_labeled:]), key=lambda s: s.id)
    labeled = [s if s.labeled else Scene(s.id, s.grid_w, s.grid_h, s.features, *oracle_truth(s), True)
               for s in labeled]
    return DatasetSplit(labeled=labeled, unlabeled=unlabeled, seed=int(seed))


def build_dataset(cfg):
    """Generate, split and attach the held-out evaluation scenes."""
    cfg.validate()
    split = split_dataset(generate_scenes(cfg), cfg.label_fraction, cfg.generator_seed)
    split.test = generate_test_scenes(cfg)
    return split


def augment(scene, strength, rng, cfg):
    """Feature-space augmentation; ground truth is never touched.

    ``weak`` adds N(0, aug_weak_std^2) noise. ``strong`` adds
    N(0, aug_strong_std^2) noise and then zeroes each location's whole
    feature vector with probability ``p_drop``.
    """
    x = scene.features
    if strength == "weak":
        if cfg.aug_weak_std > 0:
            x = x + rng.normal(0.0, cfg.aug_weak_std, size=x.shape)
    elif strength == "strong":
        x = x + rng.normal(0.0, cfg.aug_strong_std, size=x.shape)
        keep = rng.random(x.shape[0]) >= cfg.p_drop
        x = x * keep[:, None]
    else:
        raise ValueError(f"unknown augmentation strength {strength!r}")
    return scene.with_features(x)


__all__ = [
    "DatasetSplit", "HiddenLabelError", "Scene", "WorldConfig", "augment",
    "build_dataset", "generate_scene", "generate_scenes", "generate_test_scenes",
    "latent_center", "mixing_matrix", "oracle_truth", "split_dataset",
]

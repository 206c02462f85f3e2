import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semidet.assignment import assign
from semidet.simworld import (
    HiddenLabelError, WorldConfig, augment, build_dataset, generate_scene, generate_scenes, oracle_truth,
    scene_rng, split_dataset,
)

from conftest import small_world


def _inv_softplus(d):
    return d + np.log(-np.expm1(-d))


def test_noise_free_features_are_linear_in_targets():
    cfg = small_world(feature_noise_std=0.0, max_decoys=0)
    xs, ts = [], []
    for scene in generate_scenes(cfg, n=6):
        tg = assign(scene.boxes, scene.classes, scene.grid_w, scene.grid_h)
        fg = tg.foreground
        t = np.zeros((fg.sum(), cfg.class_count + 5))
        t[np.arange(fg.sum()), tg.cls[fg]] = 1.0
        t[:, cfg.class_count:cfg.class_count + 4] = _inv_softplus(tg.reg[fg])
        t[:, -1] = tg.ctr[fg]
        xs.append(scene.features[fg])
        ts.append(t)
    x = np.concatenate(xs)
    x1 = np.concatenate([x, np.ones((len(x), 1))], axis=1)
    t = np.concatenate(ts)
    coef, *_ = np.linalg.lstsq(x1, t, rcond=None)
    assert np.abs(x1 @ coef - t).max() < 1e-8


def test_same_seed_gives_identical_scenes(world):
    a = generate_scene(world, scene_rng(7, 3), 3)
    b = generate_scene(world, scene_rng(7, 3), 3)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.boxes, b.boxes) and np.array_equal(a.classes, b.classes)


def test_scene_streams_independent_of_batching(world):
    full = generate_scenes(world, n=10)
    part = generate_scenes(world, n=4, start=5)
    for x, y in zip(full[5:9], part):
        assert x.id == y.id and np.array_equal(x.features, y.features)


def test_zero_boxes_means_all_background():
    cfg = small_world(min_boxes=0, max_boxes=0)
    scene = generate_scenes(cfg, n=1)[0]
    assert len(scene.boxes) == 0
    assert not assign(scene.boxes, scene.classes, scene.grid_w, scene.grid_h).foreground.any()


@given(st.integers(0, 10_000))
@settings(max_examples=30)
def test_scene_invariants(seed):
    cfg = small_world(generator_seed=seed)
    s = generate_scene(cfg, scene_rng(seed, 0))
    assert s.features.shape == (cfg.grid_w * cfg.grid_h, cfg.feature_dim)
    assert np.all(np.isfinite(s.features))
    b = s.boxes
    assert np.all(b[:, 0] >= 0) and np.all(b[:, 1] >= 0)
    assert np.all(b[:, 2] <= cfg.grid_w) and np.all(b[:, 3] <= cfg.grid_h)
    assert np.all((b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1]) >= 1.0)
    assert np.all((s.classes >= 0) & (s.classes < cfg.class_count))


def test_split_sizes(world):
    scenes = generate_scenes(world, n=100)
    split = split_dataset(scenes, 0.1, seed=0)
    assert (len(split.labeled), len(split.unlabeled)) == (10, 90)
    assert {s.id for s in split.labeled}.isdisjoint(s.id for s in split.unlabeled)
    assert len(split_dataset(scenes, 1.0, seed=0).unlabeled) == 0


def test_split_deterministic(world):
    scenes = generate_scenes(world, n=50)
    a = split_dataset(scenes, 0.2, seed=4)
    b = split_dataset(scenes, 0.2, seed=4)
    c = split_dataset(scenes, 0.2, seed=5)
    assert [s.id for s in a.labeled] == [s.id for s in b.labeled]
    assert [s.id for s in a.labeled] != [s.id for s in c.labeled]


def test_split_rejects_empty_labeled_pool(world):
    with pytest.raises(ValueError):
        split_dataset(generate_scenes(world, n=10), 0.05, seed=0)
    with pytest.raises(ValueError):
        split_dataset(generate_scenes(world, n=10), 0.0, seed=0)


def test_unlabeled_labels_are_hidden(world):
    split = build_dataset(world)
    s = split.unlabeled[0]
    with pytest.raises(HiddenLabelError):
        s.boxes
    with pytest.raises(HiddenLabelError):
        s.classes
    boxes, classes = oracle_truth(s)
    assert len(boxes) == len(classes) >= world.min_boxes
    assert len(split.labeled[0].boxes) >= world.min_boxes


def test_weak_augmentation_without_noise_is_identity(world):
    cfg = small_world(aug_weak_std=0.0)
    s = generate_scenes(cfg, n=1)[0]
    assert np.array_equal(augment(s, "weak", np.random.default_rng(0), cfg).features, s.features)


def test_strong_augmentation_full_dropout_zeroes_features(world):
    cfg = small_world(p_drop=1.0)
    s = generate_scenes(cfg, n=1)[0]
    assert not augment(s, "strong", np.random.default_rng(0), cfg).features.any()


def test_augmentation_noise_is_centered():
    cfg = WorldConfig(grid_w=100, grid_h=100, feature_dim=13, class_count=3, max_box_size=9.0,
                      aug_strong_std=0.3, p_drop=0.0)
    s = generate_scenes(cfg, n=1)[0]
    for strength, std in (("weak", cfg.aug_weak_std), ("strong", cfg.aug_strong_std)):
        noise = augment(s, strength, np.random.default_rng(1), cfg).features - s.features
        noise = noise.ravel()[:10**5]
        assert noise.size == 10**5
        assert abs(noise.mean()) < 3 * std / np.sqrt(noise.size)


def test_augmentation_keeps_ground_truth(world):
    s = generate_scenes(world, n=1)[0]
    rng = np.random.default_rng(0)
    for strength in ("weak", "strong"):
        out = augment(s, strength, rng, world)
        assert np.array_equal(out.boxes, s.boxes) and np.array_equal(out.classes, s.classes)
        assert out.labeled == s.labeled
    hidden = s.hidden()
    assert augment(hidden, "strong", rng, world).labeled is False


def test_unknown_strength_rejected(world):
    s = generate_scenes(world, n=1)[0]
    with pytest.raises(ValueError):
        augment(s, "medium", np.random.default_rng(0), world)


@pytest.mark.parametrize("bad", [
    dict(grid_w=0), dict(label_fraction=0.0), dict(label_fraction=1.5), dict(feature_dim=4),
    dict(min_boxes=3, max_boxes=2), dict(p_drop=2.0), dict(signal_gain=0.0), dict(feature_noise_std=-1.0),
])
def test_world_validation(bad):
    with pytest.raises(ValueError):
        small_world(**bad).validate()

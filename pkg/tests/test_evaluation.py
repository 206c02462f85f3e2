import itertools
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from semidet.detector import DetectorParams
from semidet.evaluation import (
    AP_THRESHOLDS, BREAKDOWN_THRESHOLDS, EvalReport, ap_breakdown, compute_ap, evaluate_model, oracle_params,
)
from semidet.geometry import Box
from semidet.simworld import build_dataset

from ap_oracle import PALETTE, brute_ap, class_ap, instances
from conftest import small_world

TRUTH = [(Box(0, 0, 4, 4), 0), (Box(6, 6, 9, 8), 1), (Box(1, 5, 3, 9), 0)]


def test_perfect_detections_score_one():
    dets = [(b, c, 0.9) for b, c in TRUTH]
    for t in AP_THRESHOLDS:
        assert compute_ap(dets, TRUTH, t) == 1.0


def test_disjoint_detection_scores_zero():
    assert compute_ap([(Box(10, 10, 11, 11), 0, 0.9)], [(Box(0, 0, 1, 1), 0)], 0.5) == 0.0


def test_two_of_three_ranked_detections():
    truths = [(Box(0, 0, 2, 2), 0), (Box(5, 5, 7, 7), 0)]
    dets = [(Box(0, 0, 2, 2), 0, 0.9), (Box(20, 20, 21, 21), 0, 0.8), (Box(5, 5, 7, 7), 0, 0.7)]
    expected = class_ap([(b.as_array().tolist(), s) for b, _, s in dets], [b.as_array().tolist() for b, _ in truths], 0.5)
    assert compute_ap(dets, truths, 0.5) == expected
    assert expected == pytest.approx((51 * 1.0 + 50 * 2 / 3) / 101)


def test_no_truths_no_detections_is_one():
    assert compute_ap([], [], 0.5) == 1.0
    assert compute_ap([(Box(0, 0, 1, 1), 0, 0.5)], [], 0.5) == 0.0


def test_score_ties_follow_input_order():
    truths = [(Box(0, 0, 2, 2), 0)]
    fp_first = [(Box(9, 9, 10, 10), 0, 0.5), (Box(0, 0, 2, 2), 0, 0.5)]
    tp_first = fp_first[::-1]
    assert compute_ap(tp_first, truths, 0.5) == 1.0
    assert compute_ap(fp_first, truths, 0.5) == pytest.approx(0.5)


def test_matches_brute_force_on_sampled_small_instances():
    cases = list(instances(max_dets=3, max_truths=4))
    rng = random.Random(0)
    cases += rng.sample(list(instances(max_dets=5, max_truths=4, palette=PALETTE[:6])), 1500)
    for dets, truths in cases:
        d = [(Box(*b), c, s) for b, c, s in dets]
        t = [(Box(*b), c) for b, c in truths]
        for thr in (0.3, 0.5, 0.75):
            assert compute_ap(d, t, thr) == brute_ap(dets, truths, thr)


def test_breakdown_examples():
    dets = [(b, c, 0.9) for b, c in TRUTH]
    assert ap_breakdown(dets, TRUTH) == {t: 1.0 for t in BREAKDOWN_THRESHOLDS}
    assert ap_breakdown([], TRUTH) == {t: 0.0 for t in BREAKDOWN_THRESHOLDS}


def test_uniform_boundary_error_hurts_strict_thresholds_first():
    truth = [(Box(0, 0, 10, 10), 0)]
    # every edge pushed out by 0.2: IoU = 100 / 10.4^2 = 0.9246
    det = [(Box(-0.2, -0.2, 10.2, 10.2), 0, 0.9)]
    bd = ap_breakdown(det, truth)
    assert bd[0.55] == 1.0 and bd[0.90] == 1.0 and bd[0.95] == 0.0


@given(st.lists(st.tuples(st.integers(0, 7), st.floats(0.01, 1.0)), max_size=6), st.sampled_from(AP_THRESHOLDS))
def test_ap_is_rank_statistic(dets, thr):
    d = [(Box(*PALETTE[i][0]), PALETTE[i][1], s) for i, s in dets]
    truths = [(Box(0, 0, 2, 2), 0), (Box(2, 0, 4, 2), 0), (Box(10, 10, 12, 12), 1)]
    a = compute_ap(d, truths, thr)
    assert compute_ap([(b, c, s ** 3 + 7) for b, c, s in d], truths, thr) == a
    assert 0.0 <= a <= 1.0


@given(st.lists(st.tuples(st.integers(0, 7), st.floats(0.01, 1.0)), max_size=6))
def test_ap_non_increasing_in_threshold(dets):
    d = [(Box(*PALETTE[i][0]), PALETTE[i][1], s) for i, s in dets]
    truths = [(Box(0, 0, 2, 2), 0), (Box(2, 0, 4, 2), 0), (Box(10, 10, 12, 12), 1)]
    values = [compute_ap(d, truths, t) for t in np.linspace(0.05, 1.0, 20)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_oracle_detector_is_perfect():
    # one box per scene: overlapping boxes can hide one another completely
    w = small_world(feature_noise_std=0.0, appearance_std=0.0, edge_noise_scale=0.0, edge_noise_jitter=0.0,
                    max_decoys=0, max_boxes=1, n_test=20, signal_gain=2.0)
    split = build_dataset(w)
    report = evaluate_model(oracle_params(w), split.test)
    assert report.map_50_95 == 1.0


def test_zero_params_score_near_zero():
    w = small_world(n_test=40)
    report = evaluate_model(DetectorParams.zeros(w.class_count, w.feature_dim), build_dataset(w).test)
    assert report.map_50_95 < 0.05


def test_report_invariants_and_determinism(world):
    split = build_dataset(world)
    rng = np.random.default_rng(0)
    p = DetectorParams(rng.normal(0, 0.3, (world.class_count + 9, world.feature_dim)), rng.normal(0, 0.3, world.class_count + 9))
    a = evaluate_model(p, split.test)
    b = evaluate_model(p, split.test)
    assert a.to_json() == b.to_json()
    assert set(a.ap) == set(AP_THRESHOLDS)
    assert all(0.0 <= v <= 1.0 for v in a.ap.values())
    assert a.map_50_95 == pytest.approx(np.mean(list(a.ap.values())), abs=1e-15)
    assert EvalReport.from_dict(a.to_dict()) == a
    keys = set(a.to_dict())
    assert {"ap", "map_50_95", "per_class", "pseudo_precision", "pseudo_recall", "assignment", "selection"} <= keys


def test_brute_force_oracle_agrees_with_itself_under_permuted_truths():
    # guards the oracle: truth order must not matter when IoUs are distinct
    dets = [(PALETTE[0][0], 0, 0.9), (PALETTE[4][0], 0, 0.8), (PALETTE[1][0], 0, 0.7)]
    truths = [(PALETTE[0][0], 0), (PALETTE[1][0], 0)]
    for perm in itertools.permutations(truths):
        assert brute_ap(dets, list(perm), 0.5) == brute_ap(dets, truths, 0.5)

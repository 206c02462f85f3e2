import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from semidet.geometry import Box, centerness, decode_box, encode_distances, grid_locations, iou, iou_matrix

coord = st.floats(-50, 50, allow_nan=False)
size = st.floats(0.01, 40, allow_nan=False)


@st.composite
def boxes(draw):
    x1, y1 = draw(coord), draw(coord)
    return Box(x1, y1, x1 + draw(size), y1 + draw(size))


@st.composite
def box_and_inner_point(draw):
    b = draw(boxes())
    fx, fy = draw(st.floats(0, 1)), draw(st.floats(0, 1))
    return b, (b.x1 + fx * (b.x2 - b.x1), b.y1 + fy * (b.y2 - b.y1))


def test_iou_identical():
    assert iou(Box(0, 0, 2, 2), Box(0, 0, 2, 2)) == 1.0


def test_iou_partial_overlap():
    assert iou(Box(0, 0, 2, 2), Box(1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-12)


def test_iou_disjoint():
    assert iou(Box(0, 0, 1, 1), Box(2, 2, 3, 3)) == 0.0


def test_box_rejects_degenerate():
    with pytest.raises(ValueError):
        Box(0, 0, 0, 1)
    with pytest.raises(ValueError):
        Box(0, 0, math.inf, 1)


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0 + 1e-12


@given(boxes(), boxes())
def test_iou_one_only_for_identical(a, b):
    assume(a != b)
    assert iou(a, b) < 1.0 or np.allclose(a.as_array(), b.as_array(), rtol=1e-12, atol=1e-12)


def test_iou_matrix_matches_pairs():
    a = np.array([[0, 0, 2, 2], [1, 1, 3, 3.0]])
    b = np.array([[0, 0, 2, 2], [5, 5, 6, 6], [1, 0, 2, 2.0]])
    m = iou_matrix(a, b)
    assert m.shape == (2, 3)
    for i in range(2):
        for j in range(3):
            assert m[i, j] == iou(a[i], b[j])


def test_encode_examples():
    np.testing.assert_array_equal(encode_distances(Box(0, 0, 4, 4), (2, 2)), [2, 2, 2, 2])
    np.testing.assert_array_equal(encode_distances(Box(0, 0, 4, 4), (1, 2)), [1, 2, 3, 2])


def test_encode_rejects_outside_location():
    with pytest.raises(ValueError):
        encode_distances(Box(0, 0, 4, 4), (5, 2))


def test_decode_examples():
    np.testing.assert_array_equal(decode_box([2, 2, 2, 2], (2, 2)), [0, 0, 4, 4])
    np.testing.assert_array_equal(decode_box([1, 2, 3, 2], (1, 2)), [0, 0, 4, 4])


def test_decode_rejects_empty_box():
    with pytest.raises(ValueError):
        decode_box([1, 1, -1, 1], (0, 0))


@given(box_and_inner_point())
def test_encode_decode_round_trip(bp):
    b, p = bp
    out = decode_box(encode_distances(b, p), p)
    np.testing.assert_allclose(out, b.as_array(), rtol=0, atol=1e-12 * (1 + np.abs(b.as_array()).max()))


def test_centerness_examples():
    assert centerness([2, 2, 2, 2]) == 1.0
    assert centerness([1, 2, 3, 2]) == pytest.approx(math.sqrt(1 / 3), abs=1e-12)
    assert centerness([1, 1, 100, 1]) == pytest.approx(0.1, abs=1e-12)


def test_centerness_rejects_edge_location():
    with pytest.raises(ValueError):
        centerness([0, 1, 1, 1])


pos = st.floats(1e-3, 1e3, allow_nan=False)


@given(pos, pos, pos, pos, st.floats(1e-2, 1e2))
def test_centerness_scale_invariant(l, t, r, b, k):
    d = np.array([l, t, r, b])
    assert centerness(k * d) == pytest.approx(centerness(d), rel=1e-12)


@given(pos, pos, pos, pos)
def test_centerness_bounded_and_max_at_center(l, t, r, b):
    v = centerness([l, t, r, b])
    assert 0.0 < v <= 1.0
    if v == 1.0:
        assert l == r and t == b
    assert centerness([l, t, l, t]) == 1.0


def test_centerness_decreases_toward_edge():
    xs = np.linspace(0.5, 3.5, 7)  # across a width-8 box, center at 4
    vals = [centerness([x, 2, 8 - x, 2]) for x in xs]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_grid_locations_row_major_cell_centers():
    locs = grid_locations(3, 2)
    np.testing.assert_array_equal(locs, [[0.5, 0.5], [1.5, 0.5], [2.5, 0.5], [0.5, 1.5], [1.5, 1.5], [2.5, 1.5]])

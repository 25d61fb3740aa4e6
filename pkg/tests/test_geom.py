from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graspkit.geom import (GraspRect, angle_diff, center_distance_sq, convex_intersection_area,
                           enclosing_diagonal_sq, jaccard, jaccard_matrix, normalize_angle, polygon_area,
                           quad_to_rect, rect_to_quad)
from oracles import mc_jaccard, overlapping_pair, random_rect

coord = st.floats(-50, 50, allow_nan=False)
size = st.floats(0.2, 20, allow_nan=False)
angle = st.floats(0, 360, allow_nan=False)
rects = st.builds(GraspRect, coord, coord, size, size, angle)


def _vertex_set(q):
    return sorted((round(float(x), 9) + 0.0, round(float(y), 9) + 0.0) for x, y in q)


# GraspRect

def test_theta_normalized_into_half_turn():
    assert GraspRect(0, 0, 1, 1, 270).theta == 90
    assert GraspRect(0, 0, 1, 1, -10).theta == pytest.approx(170)
    assert GraspRect(0, 0, 1, 1, 180).theta == 0


@pytest.mark.parametrize("kw", [{"w": 0}, {"h": -1}, {"x": math.nan}, {"theta": math.inf}])
def test_rect_rejects_invalid_fields(kw):
    args = {"x": 0, "y": 0, "w": 1, "h": 1, "theta": 0, **kw}
    with pytest.raises(ValueError):
        GraspRect(**args)


@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_normalize_angle_range(t):
    n = normalize_angle(t)
    assert 0 <= n < 180


# rect_to_quad

def test_quad_axis_aligned_square():
    q = rect_to_quad(GraspRect(0, 0, 2, 2, 0))
    assert _vertex_set(q) == _vertex_set([(-1, -1), (1, -1), (1, 1), (-1, 1)])


def test_quad_square_quarter_turn_same_vertices():
    assert _vertex_set(rect_to_quad(GraspRect(0, 0, 2, 2, 90))) == _vertex_set(rect_to_quad(GraspRect(0, 0, 2, 2, 0)))


def test_quad_rotated_bar():
    q = rect_to_quad(GraspRect(0, 0, 2, 1, 90))
    assert _vertex_set(q) == _vertex_set([(0.5, -1), (0.5, 1), (-0.5, 1), (-0.5, -1)])


@given(rects)
def test_quad_ccw_centered_and_sized(r):
    q = rect_to_quad(r)
    assert np.allclose(q.mean(axis=0), (r.x, r.y), atol=1e-9)
    assert polygon_area(q) == pytest.approx(r.w * r.h, rel=1e-9)
    shoelace = 0.5 * sum(q[i, 0] * q[(i + 1) % 4, 1] - q[(i + 1) % 4, 0] * q[i, 1] for i in range(4))
    assert shoelace > 0
    # first edge runs along the closing direction with length w
    e0 = q[1] - q[0]
    assert np.linalg.norm(e0) == pytest.approx(r.w, rel=1e-9)
    d = (math.cos(math.radians(r.theta)), math.sin(math.radians(r.theta)))
    assert abs(abs(e0 @ d) - r.w) < 1e-9 * max(1.0, r.w)


@given(rects)
def test_quad_to_rect_inverts(r):
    back = quad_to_rect(rect_to_quad(r))
    assert (back.x, back.y, back.w, back.h) == pytest.approx((r.x, r.y, r.w, r.h), abs=1e-9)
    assert angle_diff(back.theta, r.theta) < 1e-7


# intersection and Jaccard

def test_intersection_self_is_area():
    q = rect_to_quad(GraspRect(0.5, 0.5, 1, 1, 0))
    assert convex_intersection_area(q, q) == pytest.approx(1.0, abs=1e-12)


def test_intersection_offset_unit_squares():
    a = rect_to_quad(GraspRect(0, 0, 1, 1, 0))
    b = rect_to_quad(GraspRect(0.5, 0, 1, 1, 0))
    assert convex_intersection_area(a, b) == pytest.approx(0.5, abs=1e-12)


def test_intersection_rotated_square_octagon():
    a = rect_to_quad(GraspRect(0, 0, 1, 1, 0))
    b = rect_to_quad(GraspRect(0, 0, 1, 1, 45))
    assert convex_intersection_area(a, b) == pytest.approx(2 * (math.sqrt(2) - 1), abs=1e-12)


def test_rotated_square_octagon_matches_sampling():
    a, b = GraspRect(0, 0, 1, 1, 0), GraspRect(0, 0, 1, 1, 45)
    exact = 2 * (math.sqrt(2) - 1)
    assert mc_jaccard(a, b, 1000) == pytest.approx(exact / (2 - exact), abs=3e-3)


def test_jaccard_fixtures():
    a = GraspRect(10, 10, 3, 5, 30)
    assert jaccard(a, a) == 1.0
    assert jaccard(GraspRect(0, 0, 2, 2, 0), GraspRect(100, 0, 2, 2, 0)) == 0.0
    assert jaccard(GraspRect(0, 0, 1, 1, 0), GraspRect(0.5, 0, 1, 1, 0)) == pytest.approx(1 / 3, abs=1e-12)


@settings(max_examples=200)
@given(rects, rects)
def test_jaccard_symmetric_and_bounded(a, b):
    j = jaccard(a, b)
    assert j == jaccard(b, a)
    assert 0.0 <= j <= 1.0
    inter = convex_intersection_area(rect_to_quad(a), rect_to_quad(b))
    assert inter <= min(a.area, b.area) + 1e-9


@given(rects)
def test_jaccard_self_one_and_far_translation_zero(a):
    assert jaccard(a, a) == pytest.approx(1.0, abs=1e-9)
    far = a.moved(x=a.x + 2 * (a.w + a.h) + 1)
    assert jaccard(a, far) == 0.0


@settings(max_examples=100)
@given(rects, rects, st.floats(0, 360), coord, coord)
def test_jaccard_rigid_motion_invariant(a, b, rot, tx, ty):
    t = math.radians(rot)
    c, s = math.cos(t), math.sin(t)

    def move(r):
        return r.moved(x=c * r.x - s * r.y + tx, y=s * r.x + c * r.y + ty, theta=r.theta + rot)

    assert jaccard(move(a), move(b)) == pytest.approx(jaccard(a, b), abs=1e-9)


def test_jaccard_against_sampling_oracle():
    rng = np.random.default_rng(7)
    for i in range(25):
        a, b = overlapping_pair(rng)
        assert jaccard(a, b) == pytest.approx(mc_jaccard(a, b, 600, seed=i), abs=3e-3)


def test_jaccard_matrix_matches_pairwise():
    rng = np.random.default_rng(3)
    ra = [random_rect(rng, span=3) for _ in range(5)]
    rb = [random_rect(rng, span=3) for _ in range(4)]
    m = jaccard_matrix(ra, rb)
    ref = np.array([[jaccard(a, b) for b in rb] for a in ra])
    assert np.allclose(m, ref, atol=1e-12)
    assert jaccard_matrix([], rb).shape == (0, 4)


# angle and distance helpers

@pytest.mark.parametrize("a,b,want", [(45, 45, 0), (170, 5, 15), (0, 90, 90), (10, 190, 0), (-20, 20, 40)])
def test_angle_diff_fixtures(a, b, want):
    assert angle_diff(a, b) == pytest.approx(want, abs=1e-12)


@given(angle, angle)
def test_angle_diff_properties(a, b):
    d = angle_diff(a, b)
    assert 0 <= d <= 90
    assert d == angle_diff(b, a)
    assert angle_diff(a, a + 180) == pytest.approx(0, abs=1e-9)


def test_center_distance_fixtures():
    r = lambda x, y: GraspRect(x, y, 1, 1, 0)
    assert center_distance_sq(r(2, 2), r(2, 2)) == 0
    assert center_distance_sq(r(0, 0), r(3, 4)) == 25
    assert center_distance_sq(r(1, 1), r(1, 2)) == 1


def test_enclosing_diagonal_fixtures():
    assert enclosing_diagonal_sq(GraspRect(0, 0, 1, 1, 0), GraspRect(0, 0, 1, 1, 0)) == pytest.approx(2)
    assert enclosing_diagonal_sq(GraspRect(0, 0, 1, 1, 0), GraspRect(2, 0, 1, 1, 0)) == pytest.approx(10)
    inner, outer = GraspRect(0, 0, 1, 1, 30), GraspRect(0, 0, 8, 6, 0)
    assert enclosing_diagonal_sq(inner, outer) == pytest.approx(100)


@given(rects, rects)
def test_enclosing_diagonal_bounds_center_distance(a, b):
    assert enclosing_diagonal_sq(a, b) >= center_distance_sq(a, b)

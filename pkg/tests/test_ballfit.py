import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from mmseq.ballfit import BallSegment, CollisionPlanes, build_lp, fit_ball_segment
from mmseq.errors import InfeasibleError, InputError
from mmseq.geometry import rot_z
from mmseq.lp import INFEASIBLE, OPTIMAL, UNBOUNDED, LpProblem, max_violation, solve_lp
from mmseq.macs import ConvexPolytope
from oracles import grid_search_box_segment, lp_vertex_enumeration

OFF = CollisionPlanes.disabled()


def box_hull(lo=(0, 0, 0), hi=(10, 10, 10)):
    return ConvexPolytope(np.vstack([np.eye(3), -np.eye(3)]), np.concatenate([hi, -np.asarray(lo, float)]))


# --- simplex ---------------------------------------------------------------------


def test_lp_single_variable():
    s = solve_lp(LpProblem([-1.0], [[1.0], [-1.0]], [5.0, 0.0]))
    assert s.status == OPTIMAL
    assert s.x[0] == pytest.approx(5.0, abs=1e-12)


def test_lp_infeasible_pair():
    assert solve_lp(LpProblem([0.0], [[1.0], [-1.0]], [0.0, -1.0])).status == INFEASIBLE


def test_lp_unbounded():
    assert solve_lp(LpProblem([-1.0], [[-1.0]], [0.0])).status == UNBOUNDED


def test_lp_redundant_equalities():
    p = LpProblem([1.0, 1.0], [[-1.0, 0.0], [0.0, -1.0]], [0.0, 0.0], [[1.0, 1.0], [2.0, 2.0]], [1.0, 2.0])
    s = solve_lp(p)
    assert s.status == OPTIMAL and s.objective == pytest.approx(1.0, abs=1e-12)


def test_lp_dimension_mismatch():
    with pytest.raises(InputError):
        LpProblem([1.0, 2.0], [[1.0, 0.0]], [1.0, 2.0])


@settings(max_examples=200)
@given(st.integers(0, 2**31 - 1))
def test_lp_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    m = int(rng.integers(n, 8))
    a = np.vstack([rng.normal(size=(m, n)), np.eye(n), -np.eye(n)])
    b = np.concatenate([rng.normal(size=m) + 1, np.full(2 * n, 3.0)])
    c = rng.normal(size=n)
    a_eq = b_eq = None
    if rng.random() < 0.3:
        a_eq, b_eq = rng.normal(size=(1, n)), rng.normal(size=1) * 0.3
    p = LpProblem(c, a, b, a_eq, b_eq)
    s = solve_lp(p)
    val, _ = lp_vertex_enumeration(c, a, b, a_eq, b_eq)
    if val is None:
        assert s.status == INFEASIBLE
    else:
        assert s.status == OPTIMAL
        assert max_violation(p, s.x) <= 1e-8
        assert s.objective == pytest.approx(val, abs=1e-8)


# --- ball segment -------------------------------------------------------------------


def test_box_example_against_grid_search():
    seg = fit_ball_segment(box_hull(), 3, 7, OFF)
    d, x, y = grid_search_box_segment((0, 0, 0), (10, 10, 10), 3, 7)
    assert d == pytest.approx(6.0, abs=1e-9)
    assert seg.diameter == pytest.approx(d, abs=1e-6)
    np.testing.assert_allclose(seg.b_bottom, [x, y, 3], atol=1e-6)
    np.testing.assert_allclose(seg.b_top, [x, y, 7], atol=1e-6)
    np.testing.assert_allclose(seg.b_bottom, [5, 5, 3], atol=1e-9)


def test_degenerate_segment_in_box():
    seg = fit_ball_segment(box_hull(), 5, 5, OFF)
    d, _, _ = grid_search_box_segment((0, 0, 0), (10, 10, 10), 5, 5)
    assert seg.diameter == pytest.approx(10.0, abs=1e-9) and d == pytest.approx(10.0)
    np.testing.assert_allclose(seg.b_bottom, seg.b_top)


def test_height_outside_hull_is_infeasible():
    with pytest.raises(InfeasibleError, match="height"):
        fit_ball_segment(box_hull(), -1, 5, OFF)


def test_height_on_boundary_leaves_no_clearance():
    with pytest.raises(InfeasibleError, match="clearance"):
        fit_ball_segment(box_hull(), 0, 5, OFF)


def test_collision_plane_infeasible_and_binding():
    with pytest.raises(InfeasibleError, match="collision"):
        fit_ball_segment(box_hull(), 3, 7, CollisionPlanes(x_offset=-11, z_offset=None))
    seg = fit_ball_segment(box_hull(), 3, 7, CollisionPlanes(x_offset=-6, z_offset=None))
    # -c_x + r <= -6 and c_x + r <= 10  ->  r = 2 at c_x = 8
    assert seg.diameter == pytest.approx(4.0, abs=1e-9)
    assert seg.b_bottom[0] == pytest.approx(8.0, abs=1e-9)


def test_z_collision_plane():
    # -c_z + r <= -4 pushes the bottom ball up: r <= z_min - 4
    seg = fit_ball_segment(box_hull(), 5, 6, CollisionPlanes(x_offset=None, z_offset=-4))
    assert seg.diameter == pytest.approx(2.0, abs=1e-9)


def test_bad_arguments():
    with pytest.raises(InputError):
        fit_ball_segment(box_hull(), 7, 3, OFF)
    with pytest.raises(InputError):
        CollisionPlanes(x_offset=math.inf)
    with pytest.raises(InputError):
        BallSegment([0, 0, 1], [0, 0, 0], 1.0)


def test_lp_layout():
    p = build_lp(box_hull(), 3, 7, OFF)
    np.testing.assert_array_equal(p.c, [0, 0, 0, 0, 0, 0, -1])
    np.testing.assert_array_equal(p.a_eq, [[0, 0, 1, 0, 0, 0, 0], [0, 0, 0, 0, 0, 1, 0]])
    np.testing.assert_array_equal(p.b_eq, [3, 7])
    assert np.all(p.a_ub[:-1, 6] == 1)


@given(st.floats(0.1, 9.9), st.floats(0.0, 5.0), st.floats(0, 2 * math.pi))
def test_box_closed_form_any_heights_and_yaw(z0, span, yaw):
    z1 = min(z0 + span, 9.9)
    r = rot_z(yaw)
    hull = ConvexPolytope(np.vstack([np.eye(3), -np.eye(3)]) @ r.T, [10, 10, 10, 0, 0, 0])
    seg = fit_ball_segment(hull, z0, z1, OFF)
    expected = min(10.0, 2 * z0, 2 * (10 - z1))
    assert seg.diameter == pytest.approx(expected, abs=1e-6)
    assert seg.max_violation(hull) <= 1e-8


def _random_hull(rng):
    pts = rng.normal(size=(int(rng.integers(6, 40)), 3)) * rng.uniform(0.3, 2, size=3)
    eq = ConvexHull(pts).equations
    return ConvexPolytope(eq[:, :3], -eq[:, 3]), pts


@settings(max_examples=80)
@given(st.integers(0, 2**31 - 1))
def test_containment_on_random_hulls(seed):
    rng = np.random.default_rng(seed)
    hull, pts = _random_hull(rng)
    a, b = np.sort(rng.uniform(pts[:, 2].min(), pts[:, 2].max(), 2))
    planes = CollisionPlanes(rng.uniform(-2, 1), rng.uniform(-3, 0)) if rng.random() < 0.5 else OFF
    try:
        seg = fit_ball_segment(hull, a, b, planes)
    except InfeasibleError:
        return
    assert seg.max_violation(hull, planes, k=11) <= 1e-8
    assert seg.b_bottom[2] == a and seg.b_top[2] == b


@settings(max_examples=40)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.5))
def test_relaxing_an_offset_never_shrinks_diameter(seed, extra):
    rng = np.random.default_rng(seed)
    hull, pts = _random_hull(rng)
    a, b = np.sort(rng.uniform(pts[:, 2].min(), pts[:, 2].max(), 2))
    try:
        d0 = fit_ball_segment(hull, a, b, OFF).diameter
    except InfeasibleError:
        return
    k = int(rng.integers(len(hull.offsets)))
    offsets = hull.offsets.copy()
    offsets[k] += extra
    d1 = fit_ball_segment(ConvexPolytope(hull.normals, offsets), a, b, OFF).diameter
    assert d1 >= d0 - 1e-9


def test_segment_json_round_trip():
    seg = fit_ball_segment(box_hull(), 3, 7, OFF)
    assert BallSegment.from_json(seg.to_json()) == seg

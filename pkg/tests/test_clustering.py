import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmseq.clustering import (
    Cluster,
    bfs_order,
    build_graph,
    clique_cover,
    cluster_targets,
    clusters_from_json,
    clusters_to_json,
    delta_from_diameter,
    greedy_coloring,
    verify_and_split,
)
from mmseq.errors import FormatError, InputError
from mmseq.geometry import min_enclosing_ball
from oracles import brute_force_meb_radius, min_clique_cover_size


def test_delta_values(frozen):
    assert delta_from_diameter(1.0) == pytest.approx(0.8660254, abs=1e-7)
    assert delta_from_diameter(1.0) == pytest.approx(frozen["delta_unit"], abs=1e-15)
    assert delta_from_diameter(0.0) == 0.0
    assert delta_from_diameter(2.0, safe=True) == pytest.approx(frozen["delta_safe_d2"], abs=1e-15)
    assert delta_from_diameter(2.0, safe=True) == pytest.approx(1.6329932, abs=1e-7)


@pytest.mark.parametrize("d", [-1.0, math.nan, math.inf])
def test_delta_rejects_bad_diameter(d):
    with pytest.raises(InputError):
        delta_from_diameter(d)


def test_edge_threshold_is_inclusive():
    delta = 0.75
    g = build_graph([[0, 0, 0], [delta, 0, 0]], delta)
    assert g.has_edge(0, 1) and g.n_edges == 1
    g = build_graph([[0, 0, 0], [delta + 1e-9, 0, 0]], delta)
    assert not g.has_edge(0, 1) and g.n_edges == 0


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1), st.integers(1, 80))
def test_edge_count_matches_pairwise_oracle(seed, n):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0, 2, (n, 3))
    delta = float(rng.uniform(0.1, 1.5))
    g = build_graph(p, delta)
    count = sum(
        1 for i in range(n) for j in range(i + 1, n) if math.dist(p[i], p[j]) <= delta
    )
    assert g.n_edges == count
    assert not g.adjacency.diagonal().any()
    assert np.array_equal(g.adjacency, g.adjacency.T)


def test_triangle_is_one_cluster():
    p = np.array([[0, 0, 0], [0.1, 0, 0], [0, 0.1, 0]])
    cl = clique_cover(build_graph(p, 0.5))
    assert [c.members for c in cl] == [(0, 1, 2)]


def test_far_triangles_are_two_clusters():
    tri = np.array([[0, 0, 0], [0.1, 0, 0], [0, 0.1, 0]])
    p = np.vstack([tri, tri + 10])
    cl = clique_cover(build_graph(p, 0.5))
    assert sorted(c.members for c in cl) == [(0, 1, 2), (3, 4, 5)]


@settings(max_examples=60)
@given(st.integers(0, 2**31 - 1), st.integers(1, 10))
def test_cover_is_clique_partition_near_optimum(seed, n):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0, 1, (n, 3))
    g = build_graph(p, float(rng.uniform(0.2, 0.9)))
    cl = clique_cover(g)
    members = sorted(i for c in cl for i in c.members)
    assert members == list(range(n))
    for c in cl:
        for a in c.members:
            for b in c.members:
                assert a == b or g.has_edge(a, b)
    best = min_clique_cover_size(g.adjacency.tolist())
    assert best <= len(cl) <= g.complement_max_degree() + 1
    # greedy on small graphs stays close to optimum
    assert len(cl) <= best + 2


def test_bfs_order_covers_complement_components():
    p = np.array([[0, 0, 0], [5, 0, 0], [0.1, 0, 0], [10, 0, 0]])
    g = build_graph(p, 0.5)
    order = bfs_order(g)
    assert sorted(order) == [0, 1, 2, 3] and order[0] == 0
    color = greedy_coloring(g, order)
    for i in range(4):
        for j in range(4):
            if i != j and not g.has_edge(i, j):
                assert color[i] != color[j]


def test_regular_tetrahedron_is_split():
    d = 1.0
    delta = delta_from_diameter(d)
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    v *= delta / np.linalg.norm(v[0] - v[1])
    c, r = min_enclosing_ball(v)
    assert 2 * r == pytest.approx(delta * math.sqrt(1.5), abs=1e-12)
    assert 2 * r > d
    clusters = cluster_targets(v, d)
    assert len(clusters) == 2
    assert all(c.diameter <= d + 1e-9 for c in clusters)


def test_equilateral_triangle_with_side_delta_fits_exactly():
    d = 1.0
    delta = delta_from_diameter(d)
    p = np.array([[0, 0, 0], [delta, 0, 0], [delta / 2, delta * math.sqrt(3) / 2, 0]])
    clusters = cluster_targets(p, d)
    assert len(clusters) == 1
    assert clusters[0].diameter == pytest.approx(d, abs=1e-12)


def test_fitting_cluster_unchanged():
    p = np.array([[0, 0, 0], [0.2, 0, 0], [0, 0.2, 0]])
    cl = [Cluster.of((0, 1, 2), p)]
    out = verify_and_split(cl, p, 1.0)
    assert out == cl


def test_split_removes_farthest_point():
    # the ball's support points are equidistant from its center; ties go to the lowest index
    p = np.array([[2.0, 0, 0], [0.1, 0, 0], [0.05, 0.05, 0], [0, 0, 0]])
    out = verify_and_split([Cluster.of(range(4), p)], p, 0.5)
    assert [c.members for c in out] == [(1, 2, 3), (0,)]


@settings(max_examples=60)
@given(st.integers(0, 2**31 - 1), st.integers(1, 120), st.booleans())
def test_clusters_partition_and_fit(seed, n, safe):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0, 2, (n, 3))
    d = float(rng.uniform(0.1, 1.0))
    clusters = cluster_targets(p, d, safe=safe)
    assert sorted(i for c in clusters for i in c.members) == list(range(n))
    delta = delta_from_diameter(d, safe)
    g = build_graph(p, delta)
    for c in clusters:
        assert all(a == b or g.has_edge(a, b) for a in c.members for b in c.members)
        assert c.diameter <= d + 1e-9
        if len(c.members) <= 6:
            assert c.radius == pytest.approx(brute_force_meb_radius(p[list(c.members)]), abs=1e-9)


def test_safe_mode_never_splits():
    rng = np.random.default_rng(3)
    p = rng.uniform(0, 1, (150, 3))
    d = 0.4
    g = build_graph(p, delta_from_diameter(d, safe=True))
    cover = clique_cover(g)
    assert verify_and_split(cover, p, d) == cover


def test_deterministic():
    rng = np.random.default_rng(9)
    p = rng.uniform(0, 1, (200, 3))
    assert cluster_targets(p, 0.3) == cluster_targets(p.copy(), 0.3)


def test_json_round_trip_and_errors():
    p = np.random.default_rng(1).uniform(0, 1, (30, 3))
    cl = cluster_targets(p, 0.5)
    assert clusters_from_json(clusters_to_json(cl)) == cl
    with pytest.raises(FormatError):
        clusters_from_json({"members": []})
    with pytest.raises(FormatError):
        clusters_from_json([{"members": [1]}])


def test_bad_points():
    with pytest.raises(InputError):
        build_graph(np.zeros((0, 3)), 1.0)
    with pytest.raises(InputError):
        build_graph([[0, 0]], 1.0)
    with pytest.raises(InputError):
        build_graph([[0, 0, math.nan]], 1.0)

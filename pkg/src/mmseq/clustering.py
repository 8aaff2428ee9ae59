"""Target clustering by clique cover of the proximity graph.

Two targets are adjacent when they are at most delta apart. A clique cover of
that graph is a proper coloring of its complement, which is found greedily
in connected-sequential breadth-first order. Each clique is then checked
against the ball diameter with an exact minimum enclosing ball and split if
it does not fit.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError
from .geometry import as_vec3, min_enclosing_ball

SAFE_FACTOR = math.sqrt(2.0 / 3.0)
PLANAR_FACTOR = math.sqrt(3.0) / 2.0
FIT_TOL = 1e-9


def delta_from_diameter(d: float, safe: bool = False) -> float:
    """Edge threshold for ball diameter ``d``.

    The default factor sqrt(3)/2 makes any planar clique fit the ball; the
    safe factor sqrt(2/3) makes any clique in 3D fit it (Jung's bound).
    """
    d = float(d)
    if not math.isfinite(d) or d < 0:
        raise InputError(f"ball diameter must be a finite non-negative number, got {d}")
    return (SAFE_FACTOR if safe else PLANAR_FACTOR) * d


@dataclass(frozen=True, eq=False)
class ProximityGraph:
    """Dense boolean adjacency over n targets; the complement is used through negation."""

    points: np.ndarray
    delta: float
    adjacency: np.ndarray

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def has_edge(self, i: int, j: int) -> bool:
        return bool(self.adjacency[i, j])

    def complement_neighbors(self, v: int) -> np.ndarray:
        nb = ~self.adjacency[v]
        nb[v] = False
        return np.flatnonzero(nb)

    def complement_max_degree(self) -> int:
        if self.n == 0:
            return 0
        return int(self.n - 1 - self.adjacency.sum(axis=1).min())


def _points(x) -> np.ndarray:
    p = np.asarray(x, dtype=float)
    if p.ndim != 2 or p.shape[1] != 3:
        raise InputError(f"expected an (n, 3) array of positions, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InputError("positions must be finite")
    return p


def build_graph(x, delta: float) -> ProximityGraph:
    """Edge (i, j) iff ||x_i - x_j|| <= delta and i != j (closed threshold)."""
    p = _points(x)
    if len(p) == 0:
        raise InputError("need at least one target")
    if not delta >= 0:
        raise InputError("delta must be non-negative")
    adj = np.zeros((len(p), len(p)), dtype=bool)
    block = 512  # bounds the temporary (block, n, 3) difference array
    for s in range(0, len(p), block):
        diff = p[s:s + block, None, :] - p[None, :, :]
        adj[s:s + block] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)) <= delta
    np.fill_diagonal(adj, False)
    adj.setflags(write=False)
    return ProximityGraph(p, float(delta), adj)


@dataclass(frozen=True, eq=False)
class Cluster:
    members: tuple
    center: np.ndarray
    radius: float

    def __post_init__(self):
        m = tuple(int(i) for i in self.members)
        if not m:
            raise InputError("a cluster needs at least one member")
        object.__setattr__(self, "members", m)
        object.__setattr__(self, "center", as_vec3(self.center, "cluster center"))
        object.__setattr__(self, "radius", float(self.radius))

    @classmethod
    def of(cls, members, points) -> Cluster:
        members = tuple(sorted(int(i) for i in members))
        c, r = min_enclosing_ball(np.asarray(points)[list(members)])
        return cls(members, c, r)

    @property
    def diameter(self) -> float:
        return 2 * self.radius

    def to_json(self) -> dict:
        return {"members": list(self.members), "center": self.center.tolist(), "radius": self.radius}

    @classmethod
    def from_json(cls, doc) -> Cluster:
        try:
            return cls(doc["members"], doc["center"], doc["radius"])
        except (KeyError, TypeError) as exc:
            raise FormatError(f"invalid cluster document: {exc!r}") from exc

    def __eq__(self, other):
        if not isinstance(other, Cluster):
            return NotImplemented
        return self.members == other.members and np.array_equal(self.center, other.center) and self.radius == other.radius


def bfs_order(g: ProximityGraph) -> list[int]:
    """Breadth-first order over the complement graph, one component after another,
    each started from its lowest unvisited index; neighbors enqueued by index."""
    seen = np.zeros(g.n, dtype=bool)
    order = []
    for root in range(g.n):
        if seen[root]:
            continue
        seen[root] = True
        queue = deque([root])
        while queue:
            v = queue.popleft()
            order.append(v)
            nb = ~g.adjacency[v] & ~seen
            nb[v] = False
            new = np.flatnonzero(nb)
            seen[new] = True
            queue.extend(new.tolist())
    return order


def greedy_coloring(g: ProximityGraph, order=None) -> np.ndarray:
    """Smallest-available-color greedy coloring of the complement graph."""
    order = bfs_order(g) if order is None else list(order)
    color = np.full(g.n, -1, dtype=np.int64)
    for v in order:
        nb = ~g.adjacency[v]
        nb[v] = False
        used = np.unique(color[nb & (color >= 0)])
        gap = np.flatnonzero(used != np.arange(len(used)))
        color[v] = int(gap[0]) if gap.size else len(used)
    return color


def clique_cover(g: ProximityGraph) -> list[Cluster]:
    """Partition the targets into cliques of ``g``; one cluster per color, in color order."""
    color = greedy_coloring(g)
    out = []
    for c in range(int(color.max()) + 1 if g.n else 0):
        members = np.flatnonzero(color == c)
        out.append(Cluster.of(members, g.points))
    return out


def verify_and_split(clusters, points, d: float) -> list[Cluster]:
    """Make every cluster fit a ball of diameter ``d``.

    An oversize cluster loses its point farthest from the enclosing-ball center
    (lowest index on ties) until it fits; the removed points form a new cluster
    that is processed the same way after the original ones.
    """
    p = _points(points)
    queue = deque(tuple(c.members) for c in clusters)
    out = []
    while queue:
        members = list(queue.popleft())
        spill = []
        c, r = min_enclosing_ball(p[members])
        while 2 * r > d + FIT_TOL:
            dist = np.linalg.norm(p[members] - c, axis=1)
            far = int(np.argmax(dist))
            spill.append(members.pop(far))
            c, r = min_enclosing_ball(p[members])
        out.append(Cluster(tuple(sorted(members)), c, r))
        if spill:
            queue.append(tuple(sorted(spill)))
    return out


def cluster_targets(x, d: float, safe: bool = False) -> list[Cluster]:
    """Graph, clique cover, then the enclosing-ball check, for diameter ``d``."""
    g = build_graph(x, delta_from_diameter(d, safe))
    return verify_and_split(clique_cover(g), g.points, d)


def clusters_to_json(clusters) -> list:
    return [c.to_json() for c in clusters]


def clusters_from_json(doc) -> list[Cluster]:
    if not isinstance(doc, list):
        raise FormatError("clusters document must be a list")
    return [Cluster.from_json(c) for c in doc]

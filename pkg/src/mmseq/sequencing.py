"""Visit ordering: base tour, target order, and IK solution choice.

1. The bases are toured with nearest neighbor plus 2-opt from the depot.
2. Clusters are stacked along a virtual axis in tour order, spaced h apart,
   and a shortest Hamiltonian path through the stacked copies gives the target
   order (it stays inside one stack before moving to the next).
3. One IK solution per target is picked by a shortest path through the layered
   graph whose layers are the IK solution sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, InputError

EXACT_PATH_LIMIT = 14
EXACT_TOUR_LIMIT = 10
_IMPROVE_TOL = 1e-12


def _dist_matrix(p) -> np.ndarray:
    diff = p[:, None, :] - p[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def path_length(points, order) -> float:
    p = np.asarray(points, dtype=float)[list(order)]
    if len(p) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)))


def two_opt(order, dist, max_rounds: int = 1_000_000) -> list[int]:
    """Best-improvement 2-opt on a path whose first and last nodes stay fixed.

    A closed tour is handled by passing it with the depot at both ends. Each
    round reverses the segment with the most negative length change (first in
    row-major order on ties) until no reversal shortens the path.
    """
    p = np.asarray(order, dtype=np.int64).copy()
    m = len(p)
    if m < 4:
        return p.tolist()
    a_idx, b_idx = np.triu_indices(m - 1, k=2)
    scale = max(1.0, float(dist.max()))
    for _ in range(max_rounds):
        head, tail = p[:-1], p[1:]
        edge = dist[head, tail]
        delta = dist[head[a_idx], head[b_idx]] + dist[tail[a_idx], tail[b_idx]] - edge[a_idx] - edge[b_idx]
        k = int(np.argmin(delta))
        if delta[k] >= -_IMPROVE_TOL * scale:
            break
        i, j = a_idx[k] + 1, b_idx[k]
        p[i:j + 1] = p[i:j + 1][::-1].copy()
    return p.tolist()


def two_opt_gain(order, dist) -> float:
    """Largest length decrease any single reversal would give (0 at a local optimum)."""
    p = np.asarray(order, dtype=np.int64)
    m = len(p)
    if m < 4:
        return 0.0
    a_idx, b_idx = np.triu_indices(m - 1, k=2)
    head, tail = p[:-1], p[1:]
    edge = dist[head, tail]
    delta = dist[head[a_idx], head[b_idx]] + dist[tail[a_idx], tail[b_idx]] - edge[a_idx] - edge[b_idx]
    return float(max(0.0, -delta.min()))


def nearest_neighbor(dist, start: int, nodes, end: int | None = None) -> list[int]:
    """Greedy path from ``start`` through ``nodes`` (lowest index on ties), then ``end``."""
    left = sorted(nodes)
    out = [start]
    cur = start
    while left:
        d = dist[cur, left]
        k = int(np.argmin(d))
        cur = left.pop(k)
        out.append(cur)
    if end is not None:
        out.append(end)
    return out


# --- step 1: base tour ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BaseTour:
    order: tuple  # cluster indices in visiting order (depot excluded)
    depot: np.ndarray
    length: float
    nn_length: float

    def to_json(self) -> dict:
        return {"order": list(self.order), "depot": self.depot.tolist(), "length": self.length}


def base_tour_2opt(positions, depot, seed: int = 0, restarts: int = 4) -> BaseTour:
    """Closed tour depot -> every base -> depot.

    Starts from the nearest-neighbor tour, improves it with 2-opt, then tries
    ``restarts`` seeded random tours (also 2-opted) and keeps the shortest.
    Up to ``EXACT_TOUR_LIMIT`` bases the tour is solved exactly instead.
    """
    pos = np.asarray(positions, dtype=float)
    depot = np.asarray(depot, dtype=float).reshape(-1)
    if pos.size == 0:
        pos = pos.reshape(0, depot.size)
    if pos.ndim != 2 or pos.shape[1] != depot.size:
        raise InputError("base positions and depot must have the same dimension")
    c = len(pos)
    pts = np.vstack([depot[None, :], pos, depot[None, :]])
    dist = _dist_matrix(pts)
    nodes = list(range(1, c + 1))
    nn = nearest_neighbor(dist, 0, nodes, c + 1)
    nn_len = path_length(pts, nn)
    if c <= EXACT_TOUR_LIMIT:
        best = two_opt(_held_karp(dist), dist)
        restarts = 0
    else:
        best = two_opt(nn, dist)
    best_len = path_length(pts, best)
    rng = np.random.default_rng(seed)
    for _ in range(restarts if c > 3 else 0):
        perm = (rng.permutation(c) + 1).tolist()
        cand = two_opt([0] + perm + [c + 1], dist)
        cand_len = path_length(pts, cand)
        if cand_len < best_len - _IMPROVE_TOL * max(1.0, best_len):
            best, best_len = cand, cand_len
    order = tuple(int(i) - 1 for i in best[1:-1])
    return BaseTour(order, depot, best_len, nn_len)


def tour_points(tour: BaseTour, positions) -> np.ndarray:
    pos = np.asarray(positions, dtype=float).reshape(-1, tour.depot.size)
    return np.vstack([tour.depot[None, :], pos[list(tour.order)], tour.depot[None, :]])


# --- step 2: stack of clusters ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StackedTargets:
    points: np.ndarray  # (n + 2, 3): start, stacked targets, end
    labels: np.ndarray  # original target index per row; -1 start, -2 end
    stack: np.ndarray  # stack position (0-based, tour order) per row; -1 for start/end
    h: float


def _max_intra_distance(p) -> float:
    if len(p) < 2:
        return 0.0
    return float(_dist_matrix(p).max())


def stack_clusters(
    clusters, tour: BaseTour, positions, h_scale: float = 1.5, start=None, end=None, fallback_h: float | None = None
) -> StackedTargets:
    """Copy each cluster, centered on its ball center, to (k + 1) * h along +x.

    ``h = h_scale * (largest intra-cluster pairwise distance)``; when that is
    zero (all singletons) ``fallback_h`` is used instead. The virtual start sits
    at offset 0 and the end at (c + 1) * h.
    """
    if not h_scale >= 1:
        raise InputError(f"h_scale must be >= 1, got {h_scale}")
    pos = np.asarray(positions, dtype=float)
    diam = max((_max_intra_distance(pos[list(cl.members)]) for cl in clusters), default=0.0)
    h = h_scale * diam
    if h == 0.0:
        if fallback_h is None or not fallback_h > 0:
            raise InputError("all clusters are single points; a positive fallback spacing is required")
        h = float(fallback_h)
    axis = np.array([1.0, 0.0, 0.0])
    start = np.zeros(3) if start is None else np.asarray(start, dtype=float)
    end = np.zeros(3) if end is None else np.asarray(end, dtype=float)
    rows, labels, stack = [start], [-1], [-1]
    for k, ci in enumerate(tour.order):
        cl = clusters[ci]
        members = list(cl.members)
        rows.extend(pos[members] - cl.center + (k + 1) * h * axis)
        labels.extend(members)
        stack.extend([k] * len(members))
    rows.append(end + (len(tour.order) + 1) * h * axis)
    labels.append(-2)
    stack.append(-1)
    return StackedTargets(np.array(rows), np.array(labels), np.array(stack), float(h))


@dataclass(frozen=True)
class TargetSequence:
    order: tuple  # original target indices, start/end excluded
    length: float  # Hamiltonian path length in stacked coordinates
    exact: bool


def _held_karp(dist) -> list[int]:
    """Exact shortest path from node 0 to node m-1 through all others (bitmask DP)."""
    m = len(dist)
    k = m - 2
    if k <= 0:
        return list(range(m))
    inner = np.arange(1, m - 1)
    full = 1 << k
    dp = np.full((full, k), np.inf)
    parent = np.full((full, k), -1, dtype=np.int64)
    dp[1 << np.arange(k), np.arange(k)] = dist[0, inner]
    sub = dist[np.ix_(inner, inner)]
    bits = 1 << np.arange(k)
    for mask in range(1, full):
        row = dp[mask]
        out = np.flatnonzero((mask & bits) == 0)
        if out.size == 0 or not np.isfinite(row).any():
            continue
        # extend the best endpoint j in mask by every t not in mask
        cand = row[:, None] + sub[:, out]
        j = np.argmin(cand, axis=0)
        val = cand[j, np.arange(out.size)]
        nxt = mask | bits[out]
        better = val < dp[nxt, out]
        dp[nxt[better], out[better]] = val[better]
        parent[nxt[better], out[better]] = j[better]
    last = dp[full - 1] + dist[inner, m - 1]
    j = int(np.argmin(last))
    path = []
    mask = full - 1
    while j >= 0:
        path.append(int(inner[j]))
        pj = int(parent[mask, j])
        mask ^= 1 << j
        j = pj
    return [0] + path[::-1] + [m - 1]


def hamiltonian_path(st: StackedTargets, exact_limit: int = EXACT_PATH_LIMIT) -> TargetSequence:
    """Shortest start-to-end path through every stacked target.

    Exact for up to ``exact_limit`` targets, otherwise nearest neighbor followed
    by fixed-endpoint 2-opt.
    """
    m = len(st.points)
    dist = _dist_matrix(st.points)
    n = m - 2
    if n <= exact_limit:
        path, exact = _held_karp(dist), True
    else:
        path = two_opt(nearest_neighbor(dist, 0, range(1, m - 1), m - 1), dist)
        exact = False
    order = tuple(int(st.labels[i]) for i in path[1:-1])
    return TargetSequence(order, path_length(st.points, path), exact)


def is_cluster_contiguous(order, clusters) -> bool:
    owner = {}
    for k, cl in enumerate(clusters):
        for i in cl.members:
            owner[i] = k
    seq = [owner[i] for i in order]
    seen = set()
    for a, b in zip([None] + seq, seq):
        if b != a:
            if b in seen:
                return False
            seen.add(b)
    return True


# --- step 3: layered IK graph --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConfigSequence:
    configs: np.ndarray  # (n + 2, 6) including start and goal
    choice: tuple  # chosen node index per layer
    legs: np.ndarray
    length: float

    def to_json(self) -> dict:
        return {
            "configs": self.configs.tolist(),
            "choice": list(self.choice),
            "legs": self.legs.tolist(),
            "length": self.length,
        }


def _weighted_dist(a, b, w) -> np.ndarray:
    diff = (a[:, None, :] - b[None, :, :]) * w
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def config_shortest_path(ik_sets, weights=None, labels=None) -> ConfigSequence:
    """Minimum total weighted joint distance through one node per layer.

    Layers 0 and -1 must hold one configuration each. Ties go to the
    lexicographically smallest sequence of node indices.
    """
    layers = [np.asarray(l, dtype=float).reshape(-1, np.shape(l)[-1] if np.size(l) else 6) for l in ik_sets]
    if len(layers) < 2:
        raise InputError("need at least start and goal layers")
    if len(layers[0]) != 1 or len(layers[-1]) != 1:
        raise InputError("start and goal layers must hold exactly one configuration each")
    for i, l in enumerate(layers):
        if len(l) == 0:
            name = labels[i] if labels is not None else i
            raise InfeasibleError(f"target {name} has no IK solution (layer {i} is empty)")
    dof = layers[0].shape[1]
    w = np.ones(dof) if weights is None else np.asarray(weights, dtype=float).reshape(dof)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InputError("joint weights must be finite and non-negative")
    # cost-to-go, computed from the goal backwards
    togo = [None] * len(layers)
    togo[-1] = np.zeros(1)
    edges = [None] * (len(layers) - 1)
    for i in range(len(layers) - 2, -1, -1):
        edges[i] = _weighted_dist(layers[i], layers[i + 1], w)
        togo[i] = np.min(edges[i] + togo[i + 1][None, :], axis=1)
    choice = [0]
    for i in range(len(layers) - 1):
        total = edges[i][choice[-1]] + togo[i + 1]
        choice.append(int(np.argmin(total)))  # argmin returns the first minimum
    configs = np.array([layers[i][c] for i, c in enumerate(choice)])
    legs = np.array([edges[i][choice[i], choice[i + 1]] for i in range(len(layers) - 1)])
    return ConfigSequence(configs, tuple(choice), legs, float(legs.sum()))


def greedy_first_length(ik_sets, weights=None) -> float:
    """Length obtained by always taking the first IK solution (baseline)."""
    firsts = np.array([np.asarray(l, dtype=float)[0] for l in ik_sets])
    w = np.ones(firsts.shape[1]) if weights is None else np.asarray(weights, dtype=float)
    return float(np.sum(np.linalg.norm(np.diff(firsts, axis=0) * w, axis=1)))

"""Maximal digitally convex subset of a voxel set, by concavity peeling.

A finite set S of integer points is digitally convex when every integer point
of conv(S) is in S. :func:`find_macs` peels hull-facet voxel layers off the
input until it is digitally convex, then greedily restores peeled voxels that
can be put back without breaking convexity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull

from .errors import FormatError, InputError
from .geometry import as_vec3

_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class DigitalSet:
    """Voxel indices (k, 3), kept unique and lexicographically sorted, plus grid metrics."""

    indices: np.ndarray
    origin: np.ndarray = np.zeros(3)
    resolution: float = 1.0
    dims: tuple | None = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1, 3)
        idx = np.unique(idx, axis=0)
        if self.dims is not None:
            dims = tuple(int(n) for n in self.dims)
            if np.any(idx < 0) or np.any(idx >= np.array(dims)):
                raise InputError("digital set indices fall outside the grid dims")
            object.__setattr__(self, "dims", dims)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "origin", as_vec3(self.origin, "origin"))
        object.__setattr__(self, "resolution", float(self.resolution))

    @classmethod
    def from_grid(cls, grid) -> DigitalSet:
        return cls(grid.marked_indices(), grid.origin, grid.resolution, grid.dims)

    def with_indices(self, indices) -> DigitalSet:
        return DigitalSet(indices, self.origin, self.resolution, self.dims)

    def __len__(self):
        return len(self.indices)

    def __eq__(self, other):
        if not isinstance(other, DigitalSet):
            return NotImplemented
        return np.array_equal(self.indices, other.indices)

    def as_set(self) -> set:
        return set(map(tuple, self.indices.tolist()))

    def centers(self) -> np.ndarray:
        return self.origin + (self.indices + 0.5) * self.resolution


@dataclass(frozen=True, eq=False)
class ConvexPolytope:
    """Intersection of half-spaces ``normals @ x <= offsets`` with unit normals."""

    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        b = np.asarray(self.offsets, dtype=float).reshape(-1)
        if n.shape[0] != b.shape[0] or n.shape[0] == 0:
            raise InputError("polytope needs matching, nonempty normals and offsets")
        if np.max(np.abs(np.linalg.norm(n, axis=1) - 1.0)) > 1e-9:
            raise InputError("polytope normals must be unit length")
        object.__setattr__(self, "normals", n)
        object.__setattr__(self, "offsets", b)

    def contains(self, points, tol=1e-9) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all(p @ self.normals.T <= self.offsets + tol, axis=1)

    def to_json(self) -> list:
        return [{"normal": n.tolist(), "offset": float(b)} for n, b in zip(self.normals, self.offsets)]

    @classmethod
    def from_json(cls, rows) -> ConvexPolytope:
        try:
            return cls([r["normal"] for r in rows], [r["offset"] for r in rows])
        except (KeyError, TypeError) as exc:
            raise FormatError(f"invalid half-space list: {exc!r}") from exc


# --- hull machinery on integer points ----------------------------------------


class _Hull:
    """Convex hull of integer points, robust to lower-dimensional sets.

    Stores the affine frame (mean, in-span basis, normal complement) and the
    facet inequalities inside that span.
    """

    def __init__(self, pts):
        pts = np.asarray(pts, dtype=float)
        self.points = pts
        self.mean = pts.mean(axis=0)
        centered = pts - self.mean
        if len(pts) > 1:
            # reduced SVD still yields all 3 right vectors once there are >= 3 points
            _, s, vt = np.linalg.svd(centered, full_matrices=len(pts) < 3)
            scale = max(1.0, float(s[0]))
            self.dim = int(np.sum(s > 1e-9 * scale))
        else:
            vt = np.eye(3)
            self.dim = 0
        self.basis = vt[: self.dim]
        self.complement = vt[self.dim:]
        self.lo = pts.min(axis=0)
        self.hi = pts.max(axis=0)
        # facets as rows (a, b) meaning a . y <= b in span coordinates
        if self.dim == 0:
            self.facets = np.zeros((0, 1)), np.zeros(0)
            self.vertex_ids = np.array([0])
        elif self.dim == 1:
            t = centered @ self.basis[0]
            self.facets = np.array([[1.0], [-1.0]]), np.array([t.max(), -t.min()])
            self.vertex_ids = np.array([int(np.argmin(t)), int(np.argmax(t))])
        else:
            y = centered @ self.basis.T
            hull = ConvexHull(y)
            eq = hull.equations
            self.facets = eq[:, :-1], -eq[:, -1]
            self.vertex_ids = hull.vertices

    def contains(self, pts, tol=_EPS) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        c = pts - self.mean
        ok = np.ones(len(pts), dtype=bool)
        if len(self.complement):
            ok &= np.all(np.abs(c @ self.complement.T) <= tol * 10, axis=1)
        if self.dim:
            a, b = self.facets
            y = c @ self.basis.T
            ok &= np.all(y @ a.T <= b + tol * 10, axis=1)
        return ok

    def lattice_points(self) -> np.ndarray:
        lo = np.floor(self.lo + 1e-9).astype(np.int64)
        hi = np.ceil(self.hi - 1e-9).astype(np.int64)
        axes = [np.arange(lo[i], hi[i] + 1) for i in range(3)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        return grid[self.contains(grid)]

    def planes(self):
        """Unique supporting planes as 3D (unit normal, offset) pairs, including
        both sides of each equality direction for flat sets."""
        normals, offsets = [], []
        for n in self.complement:
            off = float(n @ self.mean)
            normals += [n, -n]
            offsets += [off, -off]
        if self.dim:
            a, b = self.facets
            n3 = a @ self.basis
            n3 = n3 / np.linalg.norm(n3, axis=1, keepdims=True)
            off3 = b / np.linalg.norm(a @ self.basis, axis=1) + n3 @ self.mean
            normals += list(n3)
            offsets += list(off3)
        normals = np.array(normals).reshape(-1, 3)
        offsets = np.array(offsets)
        key = np.round(np.column_stack([normals, offsets]), 9)
        _, first = np.unique(key, axis=0, return_index=True)
        first = np.sort(first)
        return normals[first], offsets[first]


def _keyset(idx) -> set:
    return set(map(tuple, np.asarray(idx).tolist()))


def _holes(idx) -> np.ndarray:
    """Integer points of conv(idx) that are not in idx."""
    lat = _Hull(idx).lattice_points()
    member = _keyset(idx)
    return np.array([p for p in lat.tolist() if tuple(p) not in member]).reshape(-1, 3)


def hull_gaps(idx) -> np.ndarray:
    """Integer points inside the convex hull of ``idx`` that are missing from it."""
    return _holes(np.unique(np.asarray(idx, dtype=np.int64).reshape(-1, 3), axis=0))


def _hole_count(idx) -> int:
    return len(_Hull(idx).lattice_points()) - len(idx)


def is_digitally_convex(s) -> bool:
    idx = s.indices if isinstance(s, DigitalSet) else np.unique(np.asarray(s, dtype=np.int64).reshape(-1, 3), axis=0)
    if len(idx) == 0:
        raise InputError("digital convexity is undefined for an empty set")
    return _hole_count(idx) == 0


def polytope_of(s: DigitalSet) -> ConvexPolytope:
    """Half-space form of the hull of the voxel centers of ``s`` in metric coordinates."""
    normals, offsets = _Hull(s.indices).planes()
    # index space -> metric: x = origin + (i + 0.5) * res
    shift = s.origin + 0.5 * s.resolution
    metric_offsets = offsets * s.resolution + normals @ shift
    return ConvexPolytope(normals, metric_offsets)


def _peel_candidates(idx, hull):
    """Voxel layers lying on each supporting plane of the current hull."""
    normals, offsets = hull.planes()
    pts = idx.astype(float)
    proj = pts @ normals.T
    out = []
    for k in range(len(offsets)):
        on = np.flatnonzero(proj[:, k] >= offsets[k] - 1e-7)
        if 0 < len(on) < len(idx):
            out.append(on)
    uniq = {}
    for layer in out:
        uniq.setdefault(tuple(layer.tolist()), layer)
    layers = list(uniq.values())
    # fewest voxels first, then lexicographically smallest voxel list (idx rows are sorted)
    layers.sort(key=lambda l: (len(l), l.tolist()))
    return layers


class _Grower:
    """Closure growth inside a fixed voxel set ``s``.

    A candidate voxel is accepted together with every integer point of the new
    hull, provided all of them belong to ``s``; the current set therefore stays
    digitally convex at every step.
    """

    def __init__(self, s_idx):
        self.lo = s_idx.min(axis=0)
        self.inside = np.zeros(s_idx.max(axis=0) - self.lo + 1, dtype=bool)
        self.inside[tuple((s_idx - self.lo).T)] = True

    def closure_in_s(self, verts, v):
        lat = _Hull(np.vstack([verts, v[None, :]])).lattice_points() - self.lo
        if np.any(lat < 0) or np.any(lat >= self.inside.shape):
            return None
        return lat if self.inside[tuple(lat.T)].all() else None

    def grow(self, start, order):
        """Grow the convex set ``start`` by trying ``order`` (rows of s) until nothing fits."""
        cur = np.zeros_like(self.inside)
        cur[tuple((start - self.lo).T)] = True
        pts = np.asarray(start, dtype=np.int64)
        verts = pts[_Hull(pts).vertex_ids]
        changed = True
        while changed:
            changed = False
            for v in order:
                if cur[tuple(v - self.lo)]:
                    continue
                lat = self.closure_in_s(verts, v)
                if lat is None:
                    continue
                cur[tuple(lat.T)] = True
                pts = np.argwhere(cur) + self.lo
                verts = pts[_Hull(pts).vertex_ids]
                changed = True
        return np.argwhere(cur) + self.lo


def _restore(idx, s_idx):
    """Put peeled voxels back (with any points their hull needs) in lexicographic order."""
    members = _keyset(idx)
    order = np.array([v for v in s_idx.tolist() if tuple(v) not in members], dtype=np.int64).reshape(-1, 3)
    return _Grower(s_idx).grow(idx, order)


def _multistart(best, s_idx):
    """Grow from every single voxel, nearest candidates first; keep the largest set."""
    grower = _Grower(s_idx)
    for seed in s_idx:
        dist = np.linalg.norm(s_idx - seed, axis=1)
        order = s_idx[np.lexsort((s_idx[:, 2], s_idx[:, 1], s_idx[:, 0], dist))]
        cand = grower.grow(seed[None, :], order)
        if len(cand) > len(best):
            best = cand
    return best


MULTISTART_LIMIT = 128


def find_macs(s: DigitalSet, multistart_limit: int = MULTISTART_LIMIT) -> tuple[DigitalSet, ConvexPolytope]:
    """Approximate maximum digitally convex subset of ``s`` and its hull half-spaces.

    Each round computes the hull of the current set and, if it encloses missing
    integer points, removes the smallest facet layer whose removal lowers the
    number of missing points (ties: lexicographically smallest layer). When no
    layer lowers it, the smallest layer is removed anyway, so the loop always
    terminates. Peeled voxels are then re-added in lexicographic order whenever
    they fit, each together with any points its hull needs, until none fits.

    Peeling from the outside does poorly on sparse sets, so sets of at most
    ``multistart_limit`` voxels are also grown from every single voxel and the
    largest result is kept (the peeled one on ties).
    """
    if len(s) == 0:
        raise InputError("find_macs needs a nonempty set")
    idx = s.indices
    peeled = False
    holes = _hole_count(idx)
    while holes > 0:
        hull = _Hull(idx)
        layers = _peel_candidates(idx, hull)
        if not layers:
            # flat set whose only planes contain every voxel; fall back to dropping one voxel
            layers = [np.array([len(idx) - 1])]
        choice, new_holes = None, None
        for layer in layers:
            keep = np.ones(len(idx), dtype=bool)
            keep[layer] = False
            h = _hole_count(idx[keep])
            if h < holes:
                choice, new_holes = layer, h
                break
        if choice is None:
            choice = layers[0]
            keep = np.ones(len(idx), dtype=bool)
            keep[choice] = False
            new_holes = _hole_count(idx[keep])
        keep = np.ones(len(idx), dtype=bool)
        keep[choice] = False
        peeled = True
        idx = idx[keep]
        holes = new_holes
    if peeled:
        idx = _restore(idx, s.indices)
        if len(s) <= multistart_limit:
            idx = _multistart(idx, s.indices)
    m = s.with_indices(idx)
    return m, polytope_of(m)


def macs_to_json(m: DigitalSet, hull: ConvexPolytope) -> dict:
    return {
        "origin": m.origin.tolist(),
        "resolution": m.resolution,
        "dims": list(m.dims) if m.dims is not None else None,
        "voxels": m.indices.tolist(),
        "halfspaces": hull.to_json(),
    }


def macs_from_json(doc) -> tuple[DigitalSet, ConvexPolytope]:
    try:
        m = DigitalSet(doc["voxels"], doc["origin"], doc["resolution"], doc.get("dims"))
        return m, ConvexPolytope.from_json(doc["halfspaces"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"invalid macs document: {exc!r}") from exc


def dumps_macs(m, hull) -> str:
    return json.dumps(macs_to_json(m, hull))

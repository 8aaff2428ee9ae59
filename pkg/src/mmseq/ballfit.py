"""Largest segment of equal balls inside a convex polytope, by linear programming.

The decision vector is ``a = [bb_x, bb_y, bb_z, bt_x, bt_y, bt_z, r]`` where bb
and bt are the bottom and top ball centers and ``r = d/2``. The objective is
``-r``. A ball of radius r lies in the half-space ``n.x <= b`` (unit n) iff its
center satisfies ``n.c + r <= b``; convexity then puts every ball on the
segment between the two centers inside as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InfeasibleError, InputError, InvariantError
from .geometry import as_vec3
from .lp import INFEASIBLE, OPTIMAL, UNBOUNDED, LpProblem, solve_lp
from .macs import ConvexPolytope

_N = 7  # bb(3), bt(3), r
_R_MIN = 1e-12
_FIX_TOL = 0.0


@dataclass(frozen=True)
class CollisionPlanes:
    """Keep-out planes: each center c must satisfy ``-c_x + r <= x_offset`` and
    ``-c_z + r <= z_offset``. ``None`` disables a plane."""

    x_offset: float | None = 0.0
    z_offset: float | None = 0.0

    def __post_init__(self):
        for name in ("x_offset", "z_offset"):
            v = getattr(self, name)
            if v is None:
                continue
            if not math.isfinite(v):
                raise InputError(f"{name} must be finite (use None to disable the plane)")
            object.__setattr__(self, name, float(v))

    @classmethod
    def disabled(cls) -> CollisionPlanes:
        return cls(None, None)

    def rows(self):
        """(normal, offset) pairs in the same ``n.c + r <= b`` form as hull rows."""
        out = []
        if self.x_offset is not None:
            out.append((np.array([-1.0, 0.0, 0.0]), self.x_offset))
        if self.z_offset is not None:
            out.append((np.array([0.0, 0.0, -1.0]), self.z_offset))
        return out


@dataclass(frozen=True, eq=False)
class BallSegment:
    b_bottom: np.ndarray
    b_top: np.ndarray
    diameter: float

    def __post_init__(self):
        object.__setattr__(self, "b_bottom", as_vec3(self.b_bottom, "b_bottom"))
        object.__setattr__(self, "b_top", as_vec3(self.b_top, "b_top"))
        object.__setattr__(self, "diameter", float(self.diameter))
        if not self.diameter > 0:
            raise InputError(f"ball diameter must be positive, got {self.diameter}")
        if self.b_top[2] < self.b_bottom[2]:
            raise InputError("b_top must not lie below b_bottom")

    @property
    def radius(self) -> float:
        return self.diameter / 2

    def center_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.b_bottom + np.multiply.outer(t, self.b_top - self.b_bottom)

    def sample_centers(self, k: int = 11) -> np.ndarray:
        return self.center_at(np.linspace(0.0, 1.0, k))

    def max_violation(self, hull: ConvexPolytope, planes: CollisionPlanes | None = None, k: int = 11) -> float:
        """Largest ``n.c + r - b`` over k evenly spaced centers and every constraint row."""
        normals, offsets = _rows(hull, planes or CollisionPlanes.disabled())
        c = self.sample_centers(k)
        return float(np.max(c @ normals.T + self.radius - offsets))

    def to_json(self) -> dict:
        return {"b_bottom": self.b_bottom.tolist(), "b_top": self.b_top.tolist(), "diameter": self.diameter}

    @classmethod
    def from_json(cls, doc) -> BallSegment:
        try:
            return cls(doc["b_bottom"], doc["b_top"], doc["diameter"])
        except (KeyError, TypeError) as exc:
            raise FormatError(f"invalid ball segment document: {exc!r}") from exc

    def __eq__(self, other):
        if not isinstance(other, BallSegment):
            return NotImplemented
        return (
            np.array_equal(self.b_bottom, other.b_bottom)
            and np.array_equal(self.b_top, other.b_top)
            and self.diameter == other.diameter
        )


def _rows(hull, planes):
    normals = [np.asarray(hull.normals, dtype=float)]
    offsets = [np.asarray(hull.offsets, dtype=float)]
    for n, b in planes.rows():
        normals.append(n[None, :])
        offsets.append(np.array([b]))
    return np.vstack(normals), np.concatenate(offsets)


def _center_rows(normals, offsets):
    """Rows acting on bb and bt separately, as (k, 6) coefficient blocks."""
    m = len(offsets)
    g = np.zeros((2 * m, 6))
    g[:m, :3] = normals
    g[m:, 3:] = normals
    return g, np.concatenate([offsets, offsets])


def _equalities(z_min, z_max):
    a = np.zeros((2, _N))
    a[0, 2] = 1.0
    a[1, 5] = 1.0
    return a, np.array([z_min, z_max])


def build_lp(hull: ConvexPolytope, z_min: float, z_max: float, planes: CollisionPlanes) -> LpProblem:
    """The diameter-maximizing LP over ``a = [bb, bt, r]``."""
    g, h = _center_rows(*_rows(hull, planes))
    a_ub = np.zeros((len(h) + 1, _N))
    a_ub[:-1, :6] = g
    a_ub[:-1, 6] = 1.0
    a_ub[-1, 6] = -1.0  # r >= 0
    b_ub = np.concatenate([h, [0.0]])
    a_eq, b_eq = _equalities(z_min, z_max)
    c = np.zeros(_N)
    c[6] = -1.0
    return LpProblem(c, a_ub, b_ub, a_eq, b_eq)


def _diagnose(hull, z_min, z_max, planes) -> str:
    """Name the constraint group that makes the fit infeasible."""
    bare = build_lp(hull, z_min, z_max, CollisionPlanes.disabled())
    if solve_lp(bare).status == INFEASIBLE:
        return (
            f"height equalities: target heights [{z_min:.6g}, {z_max:.6g}] are not both inside "
            "the convex reachable region"
        )
    return "collision planes: no ball center satisfies the x/z keep-out planes inside the reachable region"


def _center_tiebreak(g, h, r, z_min, z_max):
    """Lexicographic max-min slack of the center rows at fixed radius.

    Repeatedly maximizes the smallest slack t over the rows not yet fixed; rows
    whose slack cannot exceed t in any optimum are then frozen at t and the
    rest are pushed further. This gives one well-defined center pair.
    """
    h = h - r
    a_eq6, b_eq = _equalities(z_min, z_max)
    a_eq = np.zeros((2, 7))
    a_eq[:, :6] = a_eq6[:, :6]
    free = np.ones(len(h), dtype=bool)
    floor = np.full(len(h), -np.inf)  # frozen rows keep slack >= floor
    x = None
    c = np.zeros(7)
    c[6] = -1.0
    while free.any():
        fixed = ~free
        a_ub = np.vstack([
            np.column_stack([g[free], np.ones(free.sum())]),
            np.column_stack([g[fixed], np.zeros(fixed.sum())]),
        ])
        b_ub = np.concatenate([h[free], h[fixed] - floor[fixed]])
        sol = solve_lp(LpProblem(c, a_ub, b_ub, a_eq, b_eq))
        if sol.status != OPTIMAL:
            raise InvariantError(f"center tie-break LP returned {sol.status}")
        t_star = float(sol.x[6])
        x = sol.x[:6]
        slack = h - g @ x
        candidates = np.flatnonzero(free & (slack <= t_star + 1e-9 * max(1.0, abs(t_star))))
        blocking = []
        base_ub = np.vstack([g[free], g[fixed]])
        base_b = np.concatenate([h[free] - (t_star - _FIX_TOL), h[fixed] - floor[fixed]])
        for i in candidates:
            # can row i get more slack than t_star while all free rows keep t_star?
            obj = np.zeros(6)
            obj[:] = g[i]  # minimize g_i . x  <=>  maximize slack_i
            probe = solve_lp(LpProblem(obj, base_ub, base_b, a_eq6[:, :6], b_eq))
            best = h[i] - probe.objective if probe.status == OPTIMAL else math.inf
            if best <= t_star + 1e-9 * max(1.0, abs(t_star)):
                blocking.append(i)
        if not blocking:  # numerical safety; should not happen
            blocking = list(candidates[:1]) or [int(np.flatnonzero(free)[0])]
        for i in blocking:
            free[i] = False
            floor[i] = t_star - _FIX_TOL
    return x


def fit_ball_segment(
    hull: ConvexPolytope, z_min: float, z_max: float, planes: CollisionPlanes | None = None
) -> BallSegment:
    """Largest diameter d such that balls of diameter d centered anywhere on the
    segment from (.., z_min) to (.., z_max) stay inside ``hull`` and clear the
    collision planes. Among optimal segments, the centers are chosen by a
    lexicographic max-min slack rule so the result is unique and deterministic.

    Raises InfeasibleError naming the binding group when no segment exists.
    """
    planes = CollisionPlanes() if planes is None else planes
    z_min, z_max = float(z_min), float(z_max)
    if not (math.isfinite(z_min) and math.isfinite(z_max)):
        raise InputError("z_min and z_max must be finite")
    if z_min > z_max:
        raise InputError(f"z_min ({z_min}) must not exceed z_max ({z_max})")
    p = build_lp(hull, z_min, z_max, planes)
    sol = solve_lp(p)
    if sol.status == UNBOUNDED:
        raise InputError("hull is unbounded; cannot fit a finite ball")
    if sol.status == INFEASIBLE:
        raise InfeasibleError(f"ball fit infeasible ({_diagnose(hull, z_min, z_max, planes)})")
    r = float(sol.x[6])
    if r <= _R_MIN:
        what = "collision planes" if planes.rows() else "height equalities"
        bare = solve_lp(build_lp(hull, z_min, z_max, CollisionPlanes.disabled()))
        if bare.status == OPTIMAL and bare.x[6] <= _R_MIN:
            what = "height equalities"
        raise InfeasibleError(f"ball fit infeasible ({what}: the largest clearance is zero)")
    g, h = _center_rows(*_rows(hull, planes))
    x = _center_tiebreak(g, h, r, z_min, z_max)
    x[2], x[5] = z_min, z_max  # equalities hold up to rounding; pin them exactly
    seg = BallSegment(x[:3], x[3:], 2 * r)
    if seg.max_violation(hull, planes) > 1e-8:
        raise InvariantError("fitted ball segment violates the hull")
    return seg

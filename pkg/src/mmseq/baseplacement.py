"""Base pose per cluster by making the cluster center coincide with a reachable ball.

The cluster frame sits at the cluster center with its x-axis along the
horizontal part of the mean approach direction. The matched ball center b is
a point of the base frame at the same height, so the world base pose is the
cluster frame composed with the inverse translation by b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, InvariantError
from .geometry import RigidTransform, angle_between, as_vec3, rot_z

HEIGHT_TOL = 1e-9
PLANAR_TOL = 1e-6
VERTICAL_TOL = 1e-6


@dataclass(frozen=True)
class BasePose:
    x: float
    y: float
    yaw: float

    @property
    def transform(self) -> RigidTransform:
        return RigidTransform(rot_z(self.yaw), np.array([self.x, self.y, 0.0]))

    def to_json(self) -> dict:
        return {"x": self.x, "y": self.y, "yaw_rad": self.yaw}

    @classmethod
    def from_json(cls, doc) -> BasePose:
        return cls(float(doc["x"]), float(doc["y"]), float(doc["yaw_rad"]))


def mean_direction(directions) -> np.ndarray:
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    return d.mean(axis=0)


def cluster_frame(center, directions) -> RigidTransform:
    """World frame of a cluster: origin at ``center``, z up, x along the
    horizontal projection of the mean approach direction."""
    c = as_vec3(center, "cluster center")
    m = mean_direction(directions)
    h = np.array([m[0], m[1]])
    norm = float(np.hypot(*h))
    if norm < VERTICAL_TOL:
        raise InfeasibleError(
            "cluster mean approach direction is (nearly) vertical, so no base heading exists; "
            "widen theta or re-orient the targets"
        )
    return RigidTransform(rot_z(math.atan2(h[1], h[0])), c)


def match_ball(c_z: float, seg) -> np.ndarray:
    """Point of the ball segment at height ``c_z`` (base frame)."""
    lo, hi = float(seg.b_bottom[2]), float(seg.b_top[2])
    if c_z < lo - HEIGHT_TOL or c_z > hi + HEIGHT_TOL:
        raise InfeasibleError(
            f"cluster height {c_z:.6g} is outside the reachable ball heights [{lo:.6g}, {hi:.6g}]"
        )
    if hi == lo:
        return seg.b_bottom.copy()
    t = (c_z - lo) / (hi - lo)
    b = seg.b_bottom + t * (seg.b_top - seg.b_bottom)
    b[2] = c_z  # same height by construction; avoid rounding drift
    return b


def base_transform(frame: RigidTransform, b) -> BasePose:
    """World base pose so that the base-frame point ``b`` lands on the frame origin."""
    t = frame @ RigidTransform.from_translation(as_vec3(b, "ball center")).inverse()
    if abs(t.translation[2]) > PLANAR_TOL:
        raise InvariantError(
            f"base pose is not on the floor (z = {t.translation[2]:.3g}); the ball height "
            "does not match the cluster height"
        )
    r = t.rotation
    if abs(r[2, 2] - 1.0) > PLANAR_TOL:
        raise InvariantError("base pose is not upright")
    yaw = math.atan2(r[1, 0], r[0, 0])
    return BasePose(float(t.translation[0]), float(t.translation[1]), yaw)


@dataclass(frozen=True)
class Placement:
    cluster: int
    pose: BasePose
    ball_center: np.ndarray = field(compare=False)
    frame: RigidTransform = field(compare=False)


def place_bases(clusters, directions, seg) -> list[Placement]:
    """One placement per cluster, in cluster order."""
    directions = np.asarray(directions, dtype=float)
    out = []
    for k, cl in enumerate(clusters):
        frame = cluster_frame(cl.center, directions[list(cl.members)])
        b = match_ball(float(cl.center[2]), seg)
        out.append(Placement(k, base_transform(frame, b), b, frame))
    return out


@dataclass(frozen=True)
class TargetCheck:
    index: int
    distance: float
    in_ball: bool
    voxel_marked: bool | None
    direction_angle: float
    direction_ok: bool

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "distance": self.distance,
            "in_ball": self.in_ball,
            "voxel_marked": self.voxel_marked,
            "direction_angle_rad": self.direction_angle,
            "direction_ok": self.direction_ok,
        }


@dataclass(frozen=True)
class ReachabilityReport:
    cluster: int
    checks: tuple

    @property
    def all_in_ball(self) -> bool:
        return all(c.in_ball for c in self.checks)

    @property
    def warnings(self) -> list[str]:
        out = []
        for c in self.checks:
            if not c.in_ball:
                out.append(f"target {c.index}: {c.distance:.6g} m from the matched ball center")
            if c.voxel_marked is False:
                out.append(f"target {c.index}: containing voxel is not marked reachable")
            if not c.direction_ok:
                out.append(f"target {c.index}: direction {math.degrees(c.direction_angle):.3g} deg off the cluster mean")
        return out

    def to_json(self) -> dict:
        return {"cluster": self.cluster, "all_in_ball": self.all_in_ball, "targets": [c.to_json() for c in self.checks]}


def validate_reachability(
    cluster, placement: Placement, positions, directions, diameter: float, db=None, theta=None, cluster_id: int = 0
) -> ReachabilityReport:
    """Per-target containment, voxel marking and approach-angle checks (report only)."""
    members = list(cluster.members)
    pos = np.asarray(positions, dtype=float)[members]
    dirs = np.asarray(directions, dtype=float)[members]
    inv = placement.pose.transform.inverse()
    local = inv.apply(pos)
    dist = np.linalg.norm(local - placement.ball_center, axis=1)
    marked = db.grid.is_marked(local) if db is not None else [None] * len(members)
    if theta is None:
        theta = db.theta if db is not None else math.inf
    mean = mean_direction(dirs)
    checks = []
    for k, i in enumerate(members):
        ang = angle_between(dirs[k], mean)
        checks.append(
            TargetCheck(
                i,
                float(dist[k]),
                bool(dist[k] <= diameter / 2 + 1e-9),
                None if marked[k] is None else bool(marked[k]),
                ang,
                bool(ang <= theta + 1e-12),
            )
        )
    return ReachabilityReport(cluster_id, tuple(checks))

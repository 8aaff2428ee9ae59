"""Rigid transforms and the minimum enclosing ball."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, InvariantError

_ORTHO_TOL = 1e-9


def as_vec3(v, name="vector") -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (3,):
        raise InputError(f"{name} must have 3 components, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise InputError(f"{name} has non-finite components")
    return a


def as_unit_vec3(v, name="direction", tol=1e-9) -> np.ndarray:
    """Return ``v`` as a unit vector; raise if it is not unit-norm within ``tol``."""
    a = as_vec3(v, name)
    norm = float(np.linalg.norm(a))
    if abs(norm - 1.0) > tol:
        raise InputError(f"{name} is not unit length (norm={norm:.12g})")
    return a / norm


def normalize(v) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    n = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise InputError("cannot normalize a zero vector")
    return a / n


def angle_between(u, v) -> float:
    """Angle in radians between two nonzero vectors (atan2 form, stable near 0 and pi)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return float(np.arctan2(np.linalg.norm(np.cross(u, v)), np.dot(u, v)))


def rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """SE(3) element stored as a rotation matrix and a translation.

    Applying the transform to a point ``p`` gives ``rotation @ p + translation``.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise InvariantError("rotation must be 3x3 and translation length 3")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise InvariantError("transform has non-finite entries")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise InvariantError("rotation is not orthonormal with determinant +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> RigidTransform:
        return cls(np.eye(3), as_vec3(t, "translation"))

    @classmethod
    def from_matrix(cls, m) -> RigidTransform:
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4) or np.max(np.abs(m[3] - [0, 0, 0, 1])) > _ORTHO_TOL:
            raise InvariantError("not a homogeneous 4x4 rigid transform")
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Map one point (3,) or many (k, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def apply_direction(self, dirs) -> np.ndarray:
        return np.asarray(dirs, dtype=float) @ self.rotation.T

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return transform_compose(self, other)

    def inverse(self) -> RigidTransform:
        return transform_invert(self)

    def allclose(self, other: RigidTransform, atol=1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )


def transform_compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Return ``a * b``: the transform that applies ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def transform_invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -(rt @ t.translation))


# --- minimum enclosing ball ------------------------------------------------


def _ball_through(support):
    """Smallest ball having every support point on its boundary.

    The center is constrained to the affine hull of the support points, so for
    2 points this is the midpoint and for 3 the circumcircle in their plane.
    """
    p0 = support[0]
    if len(support) == 1:
        return p0.copy(), 0.0
    q = np.array([p - p0 for p in support[1:]])
    gram = q @ q.T
    rhs = 0.5 * np.diag(gram)
    lam = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    center = p0 + lam @ q
    r2 = max(float(np.sum((p - center) ** 2)) for p in support)
    return center, r2


def _contains(ball, p):
    c, r2 = ball
    return float(np.sum((p - c) ** 2)) <= r2 * (1 + 1e-12) + 1e-24


def _mtf_ball(pts, end, support):
    ball = _ball_through(support) if support else (pts[0].copy(), -1.0)
    if len(support) == 4:
        return ball
    i = 0
    while i < end:
        p = pts[i]
        if ball[1] < 0 or not _contains(ball, p):
            ball = _mtf_ball(pts, i, support + [p])
            # move-to-front keeps the "hard" points early in later passes
            pts.insert(0, pts.pop(i))
        i += 1
    return ball


def min_enclosing_ball(points, seed: int = 0) -> tuple[np.ndarray, float]:
    """Exact smallest enclosing ball (Welzl's algorithm with move-to-front).

    Parameters
    ----------
    points : (k, 3) array_like
        Nonempty point set.
    seed : int
        Seed for the initial shuffle; the result does not depend on it beyond
        floating point rounding.

    Returns
    -------
    center : (3,) ndarray
    radius : float
        Recomputed as the maximum distance from ``center`` to any input point, so
        the ball contains all points by construction.
    """
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p.reshape(1, -1)
    if p.shape[0] == 0:
        raise InputError("min_enclosing_ball needs at least one point")
    if p.shape[1] != 3 or not np.all(np.isfinite(p)):
        raise InputError("points must be finite 3D coordinates")
    unique = np.unique(p, axis=0)
    order = np.random.default_rng(seed).permutation(len(unique))
    pts = [unique[i] for i in order]
    center, _ = _mtf_ball(pts, len(pts), [])
    radius = float(np.max(np.linalg.norm(p - center, axis=1)))
    return center, radius

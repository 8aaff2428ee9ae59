"""Forward kinematics and numeric IK solution sets for 6R serial chains.

Two backends share the same duck-typed surface (``ik_solutions`` and the
batched ``reachable``):

* :class:`KinematicChain` -- standard Denavit-Hartenberg chain solved by
  damped least squares from seeded random restarts, with the tool roll about
  the approach axis discretized.
* :class:`SphereModel` -- reachable iff the point lies in a spherical shell
  around a shoulder point; direction is ignored. Used to check reachability
  databases against closed-form geometry.

All batched math is written elementwise (no BLAS reductions across the batch)
so a query gives bit-identical answers whether it is solved alone or as part of
a larger batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .geometry import RigidTransform, as_unit_vec3, as_vec3

N_JOINTS = 6

POS_TOL = 1e-4
ANG_TOL = 1e-3
DEDUP_TOL = 1e-2


@dataclass(frozen=True)
class TaskPoint:
    position: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec3(self.position, "position"))
        object.__setattr__(self, "direction", as_unit_vec3(self.direction, "direction", tol=1e-6))


@dataclass(frozen=True, eq=False)
class KinematicChain:
    """Six revolute joints in standard DH convention (a, alpha, d, theta offset)."""

    name: str
    a: np.ndarray
    alpha: np.ndarray
    d: np.ndarray
    offset: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        for field in ("a", "alpha", "d", "offset", "lower", "upper"):
            arr = np.asarray(getattr(self, field), dtype=float).reshape(-1)
            if arr.shape != (N_JOINTS,):
                raise InputError(f"chain field {field!r} needs {N_JOINTS} values")
            if not np.all(np.isfinite(arr)):
                raise InputError(f"chain field {field!r} has non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, field, arr)
        if np.any(self.lower >= self.upper):
            raise InputError("every joint needs lower limit < upper limit")

    @classmethod
    def from_dict(cls, doc: dict) -> KinematicChain:
        try:
            joints = doc["joints"]
            if len(joints) != N_JOINTS:
                raise InputError(f"chain must have {N_JOINTS} joints, got {len(joints)}")
            cols = {k: [float(j[k]) for j in joints] for k in ("a", "alpha", "d", "lower", "upper")}
            cols["offset"] = [float(j.get("offset", 0.0)) for j in joints]
            return cls(name=str(doc.get("name", "chain")), **cols)
        except (KeyError, TypeError) as exc:
            raise FormatError(f"invalid chain definition: {exc!r}") from exc

    def to_dict(self) -> dict:
        joints = [
            {k: float(getattr(self, k)[i]) for k in ("a", "alpha", "d", "offset", "lower", "upper")}
            for i in range(N_JOINTS)
        ]
        return {"name": self.name, "convention": "standard-dh", "joints": joints}

    @property
    def identifier(self) -> str:
        return self.name

    @property
    def reach_bound(self) -> float:
        """Upper bound on the distance from the base origin to the tool point."""
        return float(np.sum(np.hypot(self.a, self.d)))

    def within_limits(self, q, tol=0.0) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return np.all((q >= self.lower - tol) & (q <= self.upper + tol), axis=-1)

    def ik_solutions(self, target: TaskPoint, roll_samples=8, restarts=4, seed=0, **kw) -> np.ndarray:
        return ik_solutions(self, target, roll_samples, restarts, seed, **kw)

    def reachable(self, positions, directions, seeds, roll_samples=8, restarts=4, **kw) -> np.ndarray:
        """Batched ``len(ik_solutions(...)) > 0`` for many (position, direction, seed) queries."""
        return _reachable(self, positions, directions, seeds, roll_samples, restarts, **kw)


def load_chain(path) -> KinematicChain:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return KinematicChain.from_dict(doc)


def default_chain() -> KinematicChain:
    """The bundled generic 6R arm (spherical wrist, about 0.8 m reach)."""
    text = resources.files("mmseq.data").joinpath("generic6r.json").read_text()
    return KinematicChain.from_dict(json.loads(text))


# --- batched forward kinematics ---------------------------------------------


def _matmul3(a, b):
    # explicit 3x3 product; keeps per-element results independent of batch layout
    out = a[..., :, 0, None] * b[..., None, 0, :]
    out = out + a[..., :, 1, None] * b[..., None, 1, :]
    return out + a[..., :, 2, None] * b[..., None, 2, :]


def _matvec3(a, v):
    return a[..., :, 0] * v[..., 0, None] + a[..., :, 1] * v[..., 1, None] + a[..., :, 2] * v[..., 2, None]


def _fk_frames(chain: KinematicChain, q):
    """Rotations and origins of frames 0..6 for a batch of configs ``q`` (..., 6)."""
    q = np.asarray(q, dtype=float)
    batch = q.shape[:-1]
    rot = np.broadcast_to(np.eye(3), batch + (3, 3)).copy()
    pos = np.zeros(batch + (3,))
    rots, poss = [rot], [pos]
    for i in range(N_JOINTS):
        th = q[..., i] + chain.offset[i]
        ct, st = np.cos(th), np.sin(th)
        ca, sa = np.cos(chain.alpha[i]), np.sin(chain.alpha[i])
        link = np.empty(batch + (3, 3))
        link[..., 0, 0] = ct
        link[..., 0, 1] = -st * ca
        link[..., 0, 2] = st * sa
        link[..., 1, 0] = st
        link[..., 1, 1] = ct * ca
        link[..., 1, 2] = -ct * sa
        link[..., 2, 0] = 0.0
        link[..., 2, 1] = sa
        link[..., 2, 2] = ca
        trans = np.stack([chain.a[i] * ct, chain.a[i] * st, np.full(batch, chain.d[i])], axis=-1)
        pos = _matvec3(rot, trans) + pos
        rot = _matmul3(rot, link)
        rots.append(rot)
        poss.append(pos)
    return rots, poss


def fk_batch(chain: KinematicChain, q):
    """Tool rotation (..., 3, 3) and position (..., 3); no limit checks."""
    rots, poss = _fk_frames(chain, q)
    return rots[-1], poss[-1]


def forward_kinematics(chain: KinematicChain, q) -> RigidTransform:
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape != (N_JOINTS,):
        raise InputError(f"configuration needs {N_JOINTS} joint values")
    if not chain.within_limits(q):
        raise InputError(f"configuration {q.tolist()} violates joint limits")
    rot, pos = fk_batch(chain, q)
    return RigidTransform(rot, pos)


def _jacobian(rots, poss):
    """Geometric Jacobian (..., 6, 6) in the base frame from FK frames."""
    pe = poss[-1]
    cols = []
    for i in range(N_JOINTS):
        z = rots[i][..., :, 2]
        cols.append(np.concatenate([np.cross(z, pe - poss[i]), z], axis=-1))
    return np.stack(cols, axis=-1)


# --- IK ---------------------------------------------------------------------


def _frame_about(direction, roll):
    """Rotations whose z-axis is ``direction`` (m, 3), rotated by each ``roll`` (S,).

    Returns (m, S, 3, 3).
    """
    z = np.asarray(direction, dtype=float)
    ref = np.where(np.abs(z[:, 2:3]) < 0.9, np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    x0 = np.cross(ref, z)
    x0 = x0 / np.linalg.norm(x0, axis=-1, keepdims=True)
    y0 = np.cross(z, x0)
    c, s = np.cos(roll)[None, :, None], np.sin(roll)[None, :, None]
    x = c * x0[:, None, :] + s * y0[:, None, :]
    y = -s * x0[:, None, :] + c * y0[:, None, :]
    zz = np.broadcast_to(z[:, None, :], x.shape)
    return np.stack([x, y, zz], axis=-1)


def _wrap(q):
    return (q + np.pi) % (2 * np.pi) - np.pi


def _seed_configs(chain, seed, restarts):
    # drawn sequentially, so the first R rows are the same for any restarts >= R
    rng = np.random.default_rng(int(seed))
    return rng.uniform(chain.lower, chain.upper, size=(restarts, N_JOINTS))


def _dls(chain, target_rot, target_pos, q0, group, *, max_iter, damping, pos_tol, ang_tol, stop_on_first):
    """Damped least-squares IK on a flat batch.

    Returns final configs and a boolean ``ok`` array (converged, inside limits,
    round-trip tolerances met). With ``stop_on_first`` the remaining seeds of a
    group stop iterating once any member of the group succeeds; the group's
    any-success outcome is unaffected because each seed evolves independently.
    """
    q = q0.copy()
    n = q.shape[0]
    ok = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)
    eye = np.eye(6)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        qa = q[idx]
        rots, poss = _fk_frames(chain, qa)
        rot, pos = rots[-1], poss[-1]
        tr = target_rot[idx]
        e_pos = target_pos[idx] - pos
        e_rot = _rot_error(rot, tr)
        done = _verify(chain, qa, rot, pos, tr, target_pos[idx], pos_tol * 0.1, ang_tol * 0.1)
        if np.any(done):
            ok[idx[done]] = True
            active[idx[done]] = False
            if stop_on_first:
                solved = np.unique(group[idx[done]])
                active[np.isin(group, solved)] = False
        keep = ~done
        idx, qa, e_pos, e_rot = idx[keep], qa[keep], e_pos[keep], e_rot[keep]
        if idx.size == 0:
            continue
        jac = _jacobian([r[keep] for r in rots], [p[keep] for p in poss])
        err = np.concatenate([e_pos, e_rot], axis=-1)
        # damping grows with the residual (Levenberg-Marquardt style), floor at damping**2
        lam2 = 0.1 * (err * err).sum(axis=-1) + damping**2
        jjt = (jac[:, :, None, :] * jac[:, None, :, :]).sum(axis=-1) + lam2[:, None, None] * eye
        y = np.linalg.solve(jjt, err[..., None])[..., 0]
        dq = (jac * y[:, :, None]).sum(axis=1)
        step = np.sqrt((dq * dq).sum(axis=-1))
        scale = np.minimum(1.0, 0.5 / np.maximum(step, 1e-300))
        q[idx] = np.clip(_wrap(qa + dq * scale[:, None]), chain.lower, chain.upper)
    return q, ok


def _rot_error(rot, target_rot):
    """Axis-angle vector of ``target_rot @ rot.T`` in the base frame."""
    half_sin = 0.5 * (
        np.cross(rot[..., :, 0], target_rot[..., :, 0])
        + np.cross(rot[..., :, 1], target_rot[..., :, 1])
        + np.cross(rot[..., :, 2], target_rot[..., :, 2])
    )
    cos = np.clip(((rot * target_rot).sum(axis=(-1, -2)) - 1.0) / 2.0, -1.0, 1.0)
    s = np.sqrt((half_sin * half_sin).sum(axis=-1))
    angle = np.arctan2(s, cos)
    scale = np.where(s > 1e-9, angle / np.maximum(s, 1e-300), 1.0)
    return half_sin * scale[:, None]


def _verify(chain, q, rot, pos, target_rot, target_pos, pos_tol, ang_tol):
    # convergence test on the full pose; the final acceptance only looks at the tool axis
    dpos = np.sqrt(((pos - target_pos) ** 2).sum(axis=-1))
    cos_err = (rot * target_rot).sum(axis=(-1, -2))
    ang = np.arccos(np.clip((cos_err - 1.0) / 2.0, -1.0, 1.0))
    return (dpos <= pos_tol) & (ang <= ang_tol) & chain.within_limits(q)


def _tool_axis_ok(chain, q, target_pos, target_dir, pos_tol, ang_tol):
    rot, pos = fk_batch(chain, q)
    dpos = np.sqrt(((pos - target_pos) ** 2).sum(axis=-1))
    axis = rot[..., :, 2]
    cross = np.sqrt((np.cross(axis, target_dir) ** 2).sum(axis=-1))
    ang = np.arctan2(cross, (axis * target_dir).sum(axis=-1))
    return (dpos <= pos_tol) & (ang <= ang_tol) & chain.within_limits(q)


def _build_batch(chain, positions, directions, seeds, roll_samples, restarts):
    m = positions.shape[0]
    roll = 2 * np.pi * np.arange(roll_samples) / roll_samples
    frames = _frame_about(directions, roll)  # (m, S, 3, 3)
    q0 = np.stack([_seed_configs(chain, s, restarts) for s in seeds])  # (m, R, 6)
    per = restarts * roll_samples
    target_rot = np.broadcast_to(frames[:, None], (m, restarts, roll_samples, 3, 3)).reshape(m * per, 3, 3)
    q0 = np.broadcast_to(q0[:, :, None, :], (m, restarts, roll_samples, N_JOINTS)).reshape(m * per, N_JOINTS)
    target_pos = np.repeat(positions, per, axis=0)
    target_dir = np.repeat(directions, per, axis=0)
    group = np.repeat(np.arange(m), per)
    return target_rot, target_pos, target_dir, q0, group


def _check_ik_args(roll_samples, restarts):
    if int(roll_samples) < 1 or int(restarts) < 1:
        raise InputError("roll_samples and restarts must be >= 1")


def _dedup_sorted(qs, dedup_tol):
    if len(qs) == 0:
        return np.zeros((0, N_JOINTS))
    qs = qs[np.lexsort(qs.T[::-1])]
    kept = []
    for q in qs:
        if all(np.max(np.abs(q - k)) > dedup_tol for k in kept):
            kept.append(q)
    return np.array(kept)


def ik_solutions_batch(
    chain: KinematicChain,
    targets,
    roll_samples: int = 8,
    restarts: int = 4,
    seeds=0,
    *,
    pos_tol=POS_TOL,
    ang_tol=ANG_TOL,
    dedup_tol=DEDUP_TOL,
    max_iter=150,
    damping=1e-3,
):
    """IK solution sets for several task points at once.

    ``seeds`` is a single int (used for every target) or one int per target.
    Each returned set equals what :func:`ik_solutions` gives for that target alone.
    """
    _check_ik_args(roll_samples, restarts)
    targets = list(targets)
    if not targets:
        return []
    if np.ndim(seeds) == 0:
        seeds = [int(seeds)] * len(targets)
    positions = np.array([t.position for t in targets])
    directions = np.array([t.direction for t in targets])
    target_rot, target_pos, target_dir, q0, group = _build_batch(
        chain, positions, directions, seeds, int(roll_samples), int(restarts)
    )
    q, ok = _dls(
        chain, target_rot, target_pos, q0, group,
        max_iter=max_iter, damping=damping, pos_tol=pos_tol, ang_tol=ang_tol, stop_on_first=False,
    )
    ok &= _tool_axis_ok(chain, q, target_pos, target_dir, pos_tol, ang_tol)
    return [_dedup_sorted(q[ok & (group == i)], dedup_tol) for i in range(len(targets))]


def ik_solutions(
    chain: KinematicChain,
    target: TaskPoint,
    roll_samples: int = 8,
    restarts: int = 4,
    seed: int = 0,
    **kw,
) -> np.ndarray:
    """All distinct IK solutions found for ``target`` as a (k, 6) array.

    The free roll about the approach axis is sampled at ``roll_samples`` evenly
    spaced angles; each roll is attacked from ``restarts`` random seed
    configurations. Solutions are deduplicated (max joint difference above
    ``dedup_tol``) and sorted lexicographically. An unreachable target yields an
    empty (0, 6) array.
    """
    return ik_solutions_batch(chain, [target], roll_samples, restarts, [seed], **kw)[0]


def _reachable(chain, positions, directions, seeds, roll_samples, restarts, *,
               pos_tol=POS_TOL, ang_tol=ANG_TOL, max_iter=150, damping=1e-3, **_ignored):
    _check_ik_args(roll_samples, restarts)
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    directions = np.asarray(directions, dtype=float).reshape(-1, 3)
    if positions.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    target_rot, target_pos, target_dir, q0, group = _build_batch(
        chain, positions, directions, list(seeds), int(roll_samples), int(restarts)
    )
    q, ok = _dls(
        chain, target_rot, target_pos, q0, group,
        max_iter=max_iter, damping=damping, pos_tol=pos_tol, ang_tol=ang_tol, stop_on_first=True,
    )
    ok &= _tool_axis_ok(chain, q, target_pos, target_dir, pos_tol, ang_tol)
    return np.bincount(group[ok], minlength=positions.shape[0]) > 0


@dataclass(frozen=True)
class SphereModel:
    """Direction-blind reachability: r_min <= |p - shoulder| <= r_max."""

    shoulder: tuple = (0.0, 0.0, 0.0)
    r_min: float = 0.2
    r_max: float = 0.8
    name: str = "sphere"

    def __post_init__(self):
        if not (0 <= self.r_min <= self.r_max):
            raise InputError("sphere model needs 0 <= r_min <= r_max")

    @property
    def identifier(self) -> str:
        return f"{self.name}:{self.r_min:g}-{self.r_max:g}"

    def _inside(self, positions):
        p = np.asarray(positions, dtype=float).reshape(-1, 3)
        dist = np.linalg.norm(p - np.asarray(self.shoulder, dtype=float), axis=1)
        return (dist >= self.r_min) & (dist <= self.r_max)

    def ik_solutions(self, target: TaskPoint, roll_samples=8, restarts=4, seed=0, **kw) -> np.ndarray:
        _check_ik_args(roll_samples, restarts)
        return np.zeros((1, N_JOINTS)) if self._inside(target.position)[0] else np.zeros((0, N_JOINTS))

    def reachable(self, positions, directions, seeds, roll_samples=8, restarts=4, **kw) -> np.ndarray:
        _check_ik_args(roll_samples, restarts)
        return self._inside(positions)

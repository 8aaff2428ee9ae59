"""Target files and synthetic target generators.

A targets file is a JSON array of ``{"position": [x, y, z], "direction":
[dx, dy, dz]}`` objects in meters, world frame. ``direction`` is the tool
approach direction (pointing into the surface).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

UNIT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class TargetSet:
    positions: np.ndarray  # (n, 3)
    directions: np.ndarray  # (n, 3), unit

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        d = np.asarray(self.directions, dtype=float).reshape(-1, 3)
        if len(p) != len(d):
            raise InputError("positions and directions differ in length")
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "directions", d)

    def __len__(self):
        return len(self.positions)

    def to_json(self) -> list:
        return [{"position": p.tolist(), "direction": d.tolist()} for p, d in zip(self.positions, self.directions)]

    def dumps(self) -> str:
        rows = [json.dumps(r) for r in self.to_json()]
        return "[\n  " + ",\n  ".join(rows) + "\n]\n"


def _element_lines(text: str) -> list[int]:
    """1-based line on which each element of a top-level JSON array starts."""
    dec = json.JSONDecoder()
    i = 0
    n = len(text)

    def skip(i):
        while i < n and text[i] in " \t\r\n":
            i += 1
        return i

    i = skip(i)
    if i >= n or text[i] != "[":
        return []
    i = skip(i + 1)
    lines = []
    while i < n and text[i] != "]":
        lines.append(text.count("\n", 0, i) + 1)
        _, i = dec.raw_decode(text, i)
        i = skip(i)
        if i < n and text[i] == ",":
            i = skip(i + 1)
    return lines


def _vector(value, where):
    if not isinstance(value, list) or len(value) != 3:
        raise FormatError(f"{where}: expected a list of 3 numbers")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise FormatError(f"{where}: expected a list of 3 numbers")
    a = np.array(value, dtype=float)
    if not np.all(np.isfinite(a)):
        raise FormatError(f"{where}: non-finite component")
    return a


def parse_targets(text: str, source: str = "<targets>") -> TargetSet:
    """Validate a targets document; directions are renormalized when within 1e-6 of unit length."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, list):
        raise FormatError(f"{source}: line 1: top level must be a JSON array of targets")
    if not doc:
        raise FormatError(f"{source}: line 1: targets array is empty")
    lines = _element_lines(text)
    pos, dirs = [], []
    for k, item in enumerate(doc):
        where = f"{source}: line {lines[k]}: targets[{k}]"
        if not isinstance(item, dict):
            raise FormatError(f"{where}: expected an object")
        for key in ("position", "direction"):
            if key not in item:
                raise FormatError(f"{where}: missing field '{key}'")
        p = _vector(item["position"], f"{where}.position")
        d = _vector(item["direction"], f"{where}.direction")
        norm = float(np.linalg.norm(d))
        if abs(norm - 1.0) > UNIT_TOL:
            raise FormatError(f"{where}.direction: not a unit vector (norm {norm:.9g})")
        pos.append(p)
        dirs.append(d / norm)
    return TargetSet(np.array(pos), np.array(dirs))


def load_targets(path) -> TargetSet:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read targets file {path}: {exc.strerror}") from exc
    return parse_targets(text, str(path))


# --- generators -----------------------------------------------------------------

KINDS = ("curved-wall", "grid", "random-shell")


@dataclass(frozen=True)
class WallGeometry:
    """Shared generator geometry (meters, radians).

    curved-wall: vertical cylinder of ``radius`` around the origin, arc
    [-arc/2, arc/2] in azimuth. grid: plane x = ``radius``, width ``arc * radius``.
    random-shell: radii in [radius - depth, radius], azimuth within the arc.
    Heights are drawn from [z_low, z_high].
    """

    radius: float = 3.0
    arc: float = math.radians(60.0)
    z_low: float = 0.75
    z_high: float = 1.05
    depth: float = 0.3


def _tilted(normals, spread, rng):
    """Rotate each unit normal by an angle in [0, spread] about a random perpendicular axis."""
    out = np.empty_like(normals)
    for k, n in enumerate(normals):
        helper = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        u = np.cross(n, helper)
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        phi = rng.uniform(0, 2 * math.pi)
        axis = math.cos(phi) * u + math.sin(phi) * v
        ang = rng.uniform(0, spread)
        # Rodrigues with axis perpendicular to n
        out[k] = n * math.cos(ang) + np.cross(axis, n) * math.sin(ang)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def surface_normals(kind: str, positions) -> np.ndarray:
    """Untilted approach direction at each generated position (horizontal, into the surface)."""
    p = np.asarray(positions, dtype=float)
    if kind == "grid":
        return np.tile([1.0, 0.0, 0.0], (len(p), 1))
    h = p[:, :2] / np.linalg.norm(p[:, :2], axis=1, keepdims=True)
    return np.column_stack([h, np.zeros(len(p))])


def gen_targets(
    kind: str,
    n: int,
    theta_spread: float,
    seed: int = 0,
    geometry: WallGeometry | None = None,
    theta: float = math.radians(10.0),
) -> TargetSet:
    """Synthetic targets whose directions stay within ``theta_spread`` of the surface normal."""
    if kind not in KINDS:
        raise InputError(f"unknown target kind {kind!r}; choose from {', '.join(KINDS)}")
    if int(n) < 1:
        raise InputError("n must be >= 1")
    if not 0 <= theta_spread <= theta:
        raise InputError(
            f"theta_spread ({math.degrees(theta_spread):.6g} deg) must lie in [0, theta] "
            f"(theta = {math.degrees(theta):.6g} deg)"
        )
    g = geometry or WallGeometry()
    if not (g.radius > 0 and g.z_low <= g.z_high and g.arc > 0):
        raise InputError("invalid generator geometry")
    rng = np.random.default_rng(seed)
    n = int(n)
    z = rng.uniform(g.z_low, g.z_high, n)
    if kind == "curved-wall":
        az = rng.uniform(-g.arc / 2, g.arc / 2, n)
        pos = np.column_stack([g.radius * np.cos(az), g.radius * np.sin(az), z])
    elif kind == "grid":
        half = g.arc * g.radius / 2
        cols = max(1, int(math.ceil(math.sqrt(n * (2 * half) / max(g.z_high - g.z_low, 1e-9)))))
        rows = int(math.ceil(n / cols))
        ys = np.linspace(-half, half, cols)
        zs = np.linspace(g.z_low, g.z_high, rows) if rows > 1 else np.array([(g.z_low + g.z_high) / 2])
        yy, zz = np.meshgrid(ys, zs)
        grid = np.column_stack([yy.ravel(), zz.ravel()])[:n]
        pos = np.column_stack([np.full(n, g.radius), grid[:, 0], grid[:, 1]])
    else:
        az = rng.uniform(-g.arc / 2, g.arc / 2, n)
        r = rng.uniform(g.radius - g.depth, g.radius, n)
        pos = np.column_stack([r * np.cos(az), r * np.sin(az), z])
    dirs = _tilted(surface_normals(kind, pos), theta_spread, rng)
    return TargetSet(pos, dirs)

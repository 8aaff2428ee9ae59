"""Focused kinematic reachability (fkr) database.

A voxel is marked when the arm has at least one IK solution at the voxel
center for *every* bounding approach direction. The marked set is what the
convex-subset and ball-fitting stages work on.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError
from .geometry import as_vec3

log = logging.getLogger(__name__)

MAGIC = b"MMSQFKR\x00"
FORMAT_VERSION = 1
DEFAULT_RESOLUTION = 0.04


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Axis-aligned voxel grid. Voxel (i, j, k) has center origin + (idx + 0.5) * resolution."""

    origin: np.ndarray
    resolution: float
    dims: tuple
    occupancy: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", as_vec3(self.origin, "origin"))
        dims = tuple(int(n) for n in self.dims)
        if len(dims) != 3 or min(dims) <= 0:
            raise InputError(f"grid dims must be 3 positive integers, got {dims}")
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise InputError("resolution must be positive")
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.size != dims[0] * dims[1] * dims[2]:
            raise InputError("occupancy length does not match grid dims")
        occ = occ.reshape(dims).copy()
        occ.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "occupancy", occ)

    @classmethod
    def empty(cls, lo, hi, resolution) -> VoxelGrid:
        lo, hi = as_vec3(lo, "region lower corner"), as_vec3(hi, "region upper corner")
        if not resolution > 0:
            raise InputError("resolution must be positive")
        extent = hi - lo
        if np.any(extent <= 0):
            raise InputError(f"region has zero or negative volume: {lo.tolist()} .. {hi.tolist()}")
        dims = tuple(int(max(1, math.ceil(e / resolution - 1e-9))) for e in extent)
        return cls(lo, resolution, dims, np.zeros(dims, dtype=bool))

    def centers(self, indices=None) -> np.ndarray:
        if indices is None:
            indices = np.indices(self.dims).reshape(3, -1).T
        return self.origin + (np.asarray(indices, dtype=float) + 0.5) * self.resolution

    def index_of(self, points) -> np.ndarray:
        """Integer index of the voxel containing each point (may fall outside dims)."""
        return np.floor((np.asarray(points, dtype=float) - self.origin) / self.resolution).astype(int)

    def is_marked(self, points) -> np.ndarray:
        idx = np.atleast_2d(self.index_of(points))
        inside = np.all((idx >= 0) & (idx < np.array(self.dims)), axis=1)
        out = np.zeros(len(idx), dtype=bool)
        out[inside] = self.occupancy[tuple(idx[inside].T)]
        return out

    def marked_indices(self) -> np.ndarray:
        return np.argwhere(self.occupancy)

    def __eq__(self, other):
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return (
            np.array_equal(self.origin, other.origin)
            and self.resolution == other.resolution
            and self.dims == other.dims
            and np.array_equal(self.occupancy, other.occupancy)
        )


@dataclass(frozen=True, eq=False)
class FkrDatabase:
    grid: VoxelGrid
    r_ext: np.ndarray
    theta: float
    chain_id: str
    version: int = FORMAT_VERSION

    def __post_init__(self):
        r = np.asarray(self.r_ext, dtype=float).reshape(-1, 3)
        if r.shape[0] == 0:
            raise InputError("r_ext must contain at least one direction")
        r.setflags(write=False)
        object.__setattr__(self, "r_ext", r)

    @property
    def count(self) -> int:
        return int(self.grid.occupancy.sum())

    def __eq__(self, other):
        if not isinstance(other, FkrDatabase):
            return NotImplemented
        return (
            self.grid == other.grid
            and np.array_equal(self.r_ext, other.r_ext)
            and self.theta == other.theta
            and self.chain_id == other.chain_id
            and self.version == other.version
        )


def bounding_directions(theta: float) -> np.ndarray:
    """The four pyramid edge directions at half-angle ``theta`` around +x.

    Rows are [cos, 0, sin], [cos, 0, -sin], [cos, sin, 0], [cos, -sin, 0];
    duplicates (theta == 0) collapse to a single row.
    """
    if not (0.0 <= theta < math.pi / 2):
        raise InputError(f"theta must be in [0, pi/2), got {theta}")
    c, s = math.cos(theta), math.sin(theta)
    dirs = np.array([[c, 0.0, s], [c, 0.0, -s], [c, s, 0.0], [c, -s, 0.0]])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    _, first = np.unique(dirs, axis=0, return_index=True)
    return dirs[np.sort(first)]


def default_region(chain) -> tuple[np.ndarray, np.ndarray]:
    """Top-front quarter of the workspace: in front of the base (x >= 0) and above the shoulder."""
    reach = chain.reach_bound - float(chain.d[0])
    shoulder_z = float(chain.d[0])
    return np.array([0.0, -reach, shoulder_z]), np.array([reach, reach, shoulder_z + reach])


def voxel_seed(seed: int, flat_index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(flat_index)]).generate_state(1)[0])


def build_fkr(
    chain,
    region,
    resolution: float = DEFAULT_RESOLUTION,
    r_ext=None,
    *,
    theta: float | None = None,
    roll_samples: int = 8,
    restarts: int = 4,
    seed: int = 0,
    chunk_size: int = 2048,
    order=None,
    progress=None,
    recheck_rounds: int = 2,
    recheck_factor: int = 8,
) -> FkrDatabase:
    """Sample every voxel center of ``region`` and mark those reachable from all ``r_ext``.

    Parameters
    ----------
    chain
        Any backend with a batched ``reachable(positions, directions, seeds, ...)``.
    region
        ``(lo, hi)`` corners of the axis-aligned sampling box, base frame.
    r_ext
        Bounding directions; defaults to ``bounding_directions(theta)``.
    order
        Optional permutation of flat voxel indices giving evaluation order. The
        result does not depend on it (each voxel has its own derived IK seed).
    recheck_rounds, recheck_factor
        Unmarked voxels inside the hull of the marked set are usually IK
        misses rather than true gaps. Each round re-samples them with
        ``restarts * recheck_factor`` restarts and a fresh seed stream.
    """
    lo, hi = region
    grid = VoxelGrid.empty(lo, hi, resolution)
    if r_ext is None:
        if theta is None:
            raise InputError("give either r_ext or theta")
        r_ext = bounding_directions(theta)
    r_ext = np.asarray(r_ext, dtype=float).reshape(-1, 3)
    if r_ext.shape[0] == 0:
        raise InputError("r_ext must contain at least one direction")
    r_ext = r_ext / np.linalg.norm(r_ext, axis=1, keepdims=True)
    if theta is None:
        theta = float(np.max(np.arccos(np.clip(r_ext[:, 0], -1.0, 1.0))))

    n = int(np.prod(grid.dims))
    flat_order = np.arange(n) if order is None else np.asarray(order, dtype=int)
    if sorted(flat_order.tolist()) != list(range(n)):
        raise InputError("order must be a permutation of the voxel indices")
    centers = grid.centers()
    marked = np.zeros(n, dtype=bool)

    # cheap necessary condition: the tool point cannot be farther than the summed link lengths
    reach = getattr(chain, "reach_bound", None)
    if reach is not None:
        candidates = flat_order[np.linalg.norm(centers[flat_order], axis=1) <= reach + 1e-9]
    else:
        candidates = flat_order

    for start in range(0, len(candidates), chunk_size):
        chunk = candidates[start:start + chunk_size]
        alive = np.ones(len(chunk), dtype=bool)
        seeds = np.array([voxel_seed(seed, i) for i in chunk], dtype=np.uint64)
        for direction in r_ext:
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            dirs = np.broadcast_to(direction, (idx.size, 3))
            alive[idx] = chain.reachable(
                centers[chunk[idx]], dirs, seeds[idx], roll_samples=roll_samples, restarts=restarts
            )
        marked[chunk[alive]] = True
        if progress is not None:
            progress(min(start + chunk_size, len(candidates)), len(candidates))
        log.debug("fkr chunk %d: %d/%d marked", start // chunk_size, int(alive.sum()), len(chunk))

    grid = VoxelGrid(grid.origin, grid.resolution, grid.dims, marked.reshape(grid.dims))
    db = FkrDatabase(grid, r_ext, float(theta), str(chain.identifier))
    return recheck_gaps(
        chain, db, rounds=recheck_rounds, roll_samples=roll_samples,
        restarts=restarts * max(1, int(recheck_factor)), seed=seed,
    )


def gap_indices(grid: VoxelGrid) -> np.ndarray:
    """Unmarked voxels (k, 3) lying inside the convex hull of the marked ones."""
    from .macs import hull_gaps

    idx = grid.marked_indices()
    if len(idx) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    gaps = hull_gaps(idx)
    inside = np.all((gaps >= 0) & (gaps < np.array(grid.dims)), axis=1)
    return gaps[inside].astype(np.int64)


def recheck_gaps(chain, db: FkrDatabase, rounds=2, roll_samples=8, restarts=32, seed=0) -> FkrDatabase:
    """Re-sample hull gaps of ``db`` with a larger IK budget; returns the updated database."""
    grid = db.grid
    occ = grid.occupancy.copy()
    for rnd in range(int(rounds)):
        gaps = gap_indices(VoxelGrid(grid.origin, grid.resolution, grid.dims, occ))
        if len(gaps) == 0:
            break
        flat = np.ravel_multi_index(tuple(gaps.T), grid.dims)
        centers = grid.centers(gaps)
        seeds = np.array(
            [int(np.random.SeedSequence([int(seed), int(i), rnd + 1]).generate_state(1)[0]) for i in flat],
            dtype=np.uint64,
        )
        alive = np.ones(len(gaps), dtype=bool)
        for direction in db.r_ext:
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            dirs = np.broadcast_to(direction, (idx.size, 3))
            alive[idx] = chain.reachable(centers[idx], dirs, seeds[idx], roll_samples=roll_samples, restarts=restarts)
        log.debug("fkr recheck %d: %d/%d gaps filled", rnd, int(alive.sum()), len(gaps))
        if not alive.any():
            break
        occ[tuple(gaps[alive].T)] = True
    grid = VoxelGrid(grid.origin, grid.resolution, grid.dims, occ)
    return FkrDatabase(grid, db.r_ext, db.theta, db.chain_id, db.version)


# --- persistence --------------------------------------------------------------
#
# layout (little-endian):
#   magic[8] | u32 version | u16 len + utf8 chain id | f64 theta |
#   u32 n_dirs + n_dirs*3 f64 | 3 f64 origin | f64 resolution | 3 u32 dims |
#   ceil(N/8) bytes occupancy, C order, bit i of byte k is voxel 8k+i


def save_fkr(db: FkrDatabase) -> bytes:
    cid = db.chain_id.encode("utf-8")
    g = db.grid
    parts = [
        MAGIC,
        struct.pack("<I", db.version),
        struct.pack("<H", len(cid)),
        cid,
        struct.pack("<d", db.theta),
        struct.pack("<I", db.r_ext.shape[0]),
        db.r_ext.astype("<f8").tobytes(),
        g.origin.astype("<f8").tobytes(),
        struct.pack("<d", g.resolution),
        struct.pack("<3I", *g.dims),
        np.packbits(g.occupancy.reshape(-1), bitorder="little").tobytes(),
    ]
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated fkr data at byte {self.pos} (need {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_fkr(data: bytes) -> FkrDatabase:
    r = _Reader(bytes(data))
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError("not an fkr database (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported fkr format version {version} (expected {FORMAT_VERSION})")
    (nid,) = r.unpack("<H")
    try:
        chain_id = r.take(nid).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("chain identifier is not valid utf-8") from exc
    (theta,) = r.unpack("<d")
    (ndirs,) = r.unpack("<I")
    r_ext = np.frombuffer(r.take(ndirs * 24), dtype="<f8").reshape(ndirs, 3).astype(float)
    origin = np.frombuffer(r.take(24), dtype="<f8").astype(float)
    (resolution,) = r.unpack("<d")
    dims = r.unpack("<3I")
    n = dims[0] * dims[1] * dims[2]
    packed = np.frombuffer(r.take((n + 7) // 8), dtype=np.uint8)
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} trailing bytes after fkr occupancy")
    occ = np.unpackbits(packed, count=n, bitorder="little").astype(bool)
    try:
        grid = VoxelGrid(origin, resolution, dims, occ.reshape(dims))
        return FkrDatabase(grid, r_ext, theta, chain_id, version)
    except InputError as exc:
        raise FormatError(f"invalid fkr header: {exc}") from exc


def write_fkr(db: FkrDatabase, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_fkr(db))


def read_fkr(path) -> FkrDatabase:
    with open(path, "rb") as fh:
        return load_fkr(fh.read())

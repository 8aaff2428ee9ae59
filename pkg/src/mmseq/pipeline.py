"""End-to-end planning: reachability data -> clusters -> base poses -> sequences."""

from __future__ import annotations

import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .ballfit import BallSegment, CollisionPlanes, fit_ball_segment
from .baseplacement import place_bases, validate_reachability
from .clustering import cluster_targets
from .errors import FormatError, InputError, MmseqError, StageError
from .fkr import DEFAULT_RESOLUTION, FkrDatabase, build_fkr, default_region, load_fkr, read_fkr
from .kinematics import N_JOINTS, TaskPoint, default_chain, ik_solutions_batch, load_chain
from .macs import ConvexPolytope, DigitalSet, find_macs, macs_from_json, macs_to_json
from .sequencing import (
    base_tour_2opt,
    config_shortest_path,
    greedy_first_length,
    hamiltonian_path,
    is_cluster_contiguous,
    stack_clusters,
)
from .targets import TargetSet

log = logging.getLogger(__name__)

BUNDLED_FKR = "generic6r_t10_r004.fkr"
BUNDLED_MACS = "generic6r_t10_r004.macs.json"
DELTA_MODES = ("planar", "safe")


@dataclass
class PipelineConfig:
    """Run parameters. Angles in degrees, lengths in meters.

    ``chain``/``fkr``/``macs`` are file paths; ``None`` selects the bundled arm
    and, when the other settings match it, its precomputed data.
    """

    chain: str | None = None
    fkr: str | None = None
    macs: str | None = None
    region: list | None = None  # [[x0, y0, z0], [x1, y1, z1]]
    resolution: float = DEFAULT_RESOLUTION
    theta: float = 10.0
    x_offset: float | None = 0.0
    z_offset: float | None = 0.0
    diameter: float | None = None
    delta_mode: str = "planar"
    h_scale: float = 1.5
    weights: list = field(default_factory=lambda: [1.0] * N_JOINTS)
    seed: int = 0
    depot: list = field(default_factory=lambda: [0.0, 0.0])
    home: list = field(default_factory=lambda: [0.0] * N_JOINTS)
    roll_samples: int = 8
    restarts: int = 4
    tour_restarts: int = 4

    def validate(self) -> PipelineConfig:
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise InputError("resolution must be positive")
        if not 0 <= self.theta < 90:
            raise InputError("theta must lie in [0, 90) degrees")
        if not self.h_scale >= 1:
            raise InputError("h_scale must be >= 1")
        if self.delta_mode not in DELTA_MODES:
            raise InputError(f"delta_mode must be one of {DELTA_MODES}")
        if self.diameter is not None and not self.diameter > 0:
            raise InputError("diameter override must be positive")
        if len(self.weights) != N_JOINTS or len(self.home) != N_JOINTS:
            raise InputError(f"weights and home need {N_JOINTS} values")
        if len(self.depot) != 2:
            raise InputError("depot is a planar [x, y] position")
        if self.region is not None and np.shape(self.region) != (2, 3):
            raise InputError("region must be [[x0, y0, z0], [x1, y1, z1]]")
        if int(self.roll_samples) < 1 or int(self.restarts) < 1:
            raise InputError("roll_samples and restarts must be >= 1")
        return self

    @property
    def theta_rad(self) -> float:
        return math.radians(self.theta)

    @classmethod
    def from_dict(cls, doc: dict) -> PipelineConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**doc).validate()

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise InputError(f"cannot read config file {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: config must be a JSON object")
    return PipelineConfig.from_dict(doc)


# --- stage helpers --------------------------------------------------------------


def resolve_chain(cfg: PipelineConfig):
    return default_chain() if cfg.chain is None else load_chain(cfg.chain)


def _uses_bundled(cfg: PipelineConfig) -> bool:
    return (
        cfg.chain is None
        and cfg.region is None
        and cfg.resolution == DEFAULT_RESOLUTION
        and cfg.theta == 10.0
        and cfg.roll_samples == 8
        and cfg.restarts == 4
    )


def _data_bytes(name: str) -> bytes:
    return resources.files("mmseq.data").joinpath(name).read_bytes()


def resolve_fkr(cfg: PipelineConfig, chain) -> FkrDatabase:
    if cfg.fkr is not None:
        try:
            db = read_fkr(cfg.fkr)
        except OSError as exc:
            raise InputError(f"cannot read fkr database {cfg.fkr}: {exc.strerror}") from exc
    elif _uses_bundled(cfg):
        db = load_fkr(_data_bytes(BUNDLED_FKR))
    else:
        region = default_region(chain) if cfg.region is None else tuple(np.asarray(cfg.region, dtype=float))
        log.info("building fkr database (this samples every voxel and can take minutes)")
        db = build_fkr(
            chain, region, cfg.resolution, theta=cfg.theta_rad,
            roll_samples=cfg.roll_samples, restarts=cfg.restarts, seed=cfg.seed,
        )
    if db.chain_id != chain.identifier:
        raise InputError(f"fkr database was built for chain {db.chain_id!r}, not {chain.identifier!r}")
    if db.count == 0:
        raise InputError("fkr database has no reachable voxels")
    return db


def resolve_macs(cfg: PipelineConfig, db: FkrDatabase) -> tuple[DigitalSet, ConvexPolytope]:
    if cfg.macs is not None:
        try:
            doc = json.loads(Path(cfg.macs).read_text())
        except OSError as exc:
            raise InputError(f"cannot read macs file {cfg.macs}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise FormatError(f"{cfg.macs}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        return macs_from_json(doc)
    if cfg.fkr is None and _uses_bundled(cfg):
        return macs_from_json(json.loads(_data_bytes(BUNDLED_MACS)))
    return find_macs(DigitalSet.from_grid(db.grid))


def collision_planes(cfg: PipelineConfig) -> CollisionPlanes:
    return CollisionPlanes(cfg.x_offset, cfg.z_offset)


def fit_for_targets(hull, targets: TargetSet, cfg: PipelineConfig) -> BallSegment:
    z = targets.positions[:, 2]
    return fit_ball_segment(hull, float(z.min()), float(z.max()), collision_planes(cfg))


def clustering_diameter(seg: BallSegment, cfg: PipelineConfig) -> float:
    if cfg.diameter is None:
        return seg.diameter
    if cfg.diameter > seg.diameter:
        raise InputError(
            f"diameter override {cfg.diameter:.6g} m exceeds the reachable ball diameter {seg.diameter:.6g} m"
        )
    return float(cfg.diameter)


IK_RETRY_FACTOR = 8


def target_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), 7, int(index)]).generate_state(1)[0])


def ik_layers(chain, targets: TargetSet, clusters, placements, order, cfg: PipelineConfig):
    """IK solution sets, in sequence order, for each target seen from its cluster's base."""
    owner = {}
    for k, cl in enumerate(clusters):
        for i in cl.members:
            owner[i] = k
    tasks = []
    for i in order:
        inv = placements[owner[i]].pose.transform.inverse()
        p = inv.apply(targets.positions[i])
        d = inv.apply_direction(targets.directions[i])
        tasks.append(TaskPoint(p, d / np.linalg.norm(d)))
    seeds = [target_seed(cfg.seed, i) for i in order]
    layers = list(ik_solutions_batch(chain, tasks, cfg.roll_samples, cfg.restarts, seeds))
    # an empty set is usually a sampling miss; retry once with a bigger budget and a fresh seed
    for k, i in enumerate(order):
        if len(layers[k]) == 0:
            retry_seed = int(np.random.SeedSequence([int(cfg.seed), 7, int(i), 1]).generate_state(1)[0])
            layers[k] = chain.ik_solutions(tasks[k], cfg.roll_samples, cfg.restarts * IK_RETRY_FACTOR, retry_seed)
    return layers


# --- run --------------------------------------------------------------------------


@dataclass
class PipelineResult:
    segment: BallSegment
    clusters: list
    placements: list
    tour: object
    sequence: object
    configs: object
    reports: list
    timings: dict
    metrics: dict

    def to_json(self, stable: bool = False) -> dict:
        doc = {
            "ball_segment": self.segment.to_json(),
            "clusters": [c.to_json() for c in self.clusters],
            "base_poses": [p.pose.to_json() for p in self.placements],
            "matched_ball_centers": [p.ball_center.tolist() for p in self.placements],
            "base_tour": self.tour.to_json(),
            "target_sequence": list(self.sequence.order),
            "config_sequence": self.configs.to_json(),
            "validation": [r.to_json() for r in self.reports],
            "metrics": self.metrics,
        }
        if not stable:
            doc["timings"] = self.timings
        return doc

    def dumps(self, stable: bool = False) -> str:
        return json.dumps(self.to_json(stable), indent=1, sort_keys=True)

    def plot_data(self, targets: TargetSet) -> dict:
        """Plain arrays for external plotting."""
        return {
            "targets": targets.positions.tolist(),
            "cluster_of": [next(k for k, c in enumerate(self.clusters) if i in c.members) for i in range(len(targets))],
            "cluster_centers": [c.center.tolist() for c in self.clusters],
            "bases": [[p.pose.x, p.pose.y, p.pose.yaw] for p in self.placements],
            "base_tour": [self.tour.depot.tolist()]
            + [[self.placements[k].pose.x, self.placements[k].pose.y] for k in self.tour.order]
            + [self.tour.depot.tolist()],
            "target_sequence": list(self.sequence.order),
        }


class _Timer:
    def __init__(self):
        self.times = {}

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except MmseqError as exc:
            raise StageError(name, exc) from exc
        finally:
            self.times[name] = self.times.get(name, 0.0) + time.perf_counter() - t0


def plan(targets: TargetSet, cfg: PipelineConfig, chain=None, db=None, macs=None) -> PipelineResult:
    """Run every stage; any library error is re-raised tagged with its stage name."""
    cfg.validate()
    timer = _Timer()
    with timer.stage("chain"):
        chain = chain or resolve_chain(cfg)
    with timer.stage("fkr"):
        db = db or resolve_fkr(cfg, chain)
    with timer.stage("macs"):
        m, hull = macs or resolve_macs(cfg, db)
    with timer.stage("ballfit"):
        seg = fit_for_targets(hull, targets, cfg)
        d = clustering_diameter(seg, cfg)
    with timer.stage("clustering"):
        clusters = cluster_targets(targets.positions, d, safe=cfg.delta_mode == "safe")
    result = plan_sequence(targets, clusters, seg, d, cfg, chain, db, timer)
    result.metrics["macs_voxels"] = len(m)
    return result


def plan_sequence(targets: TargetSet, clusters, seg: BallSegment, d: float, cfg: PipelineConfig,
                  chain=None, db=None, timer=None) -> PipelineResult:
    """Base poses, tour, target order and IK choice for an existing clustering."""
    timer = timer or _Timer()
    with timer.stage("chain"):
        chain = chain or resolve_chain(cfg)
    with timer.stage("base_poses"):
        placements = place_bases(clusters, targets.directions, seg)
        reports = [
            validate_reachability(cl, pl, targets.positions, targets.directions, d, db, cfg.theta_rad, k)
            for k, (cl, pl) in enumerate(zip(clusters, placements))
        ]
    with timer.stage("sequencing"):
        bases = np.array([[p.pose.x, p.pose.y] for p in placements])
        tour = base_tour_2opt(bases, cfg.depot, seed=cfg.seed, restarts=cfg.tour_restarts)
        stack = stack_clusters(clusters, tour, targets.positions, cfg.h_scale, fallback_h=d)
        seq = hamiltonian_path(stack)
    with timer.stage("ik"):
        layers = ik_layers(chain, targets, clusters, placements, seq.order, cfg)
    with timer.stage("sequencing"):
        home = np.asarray(cfg.home, dtype=float)[None, :]
        full = [home] + list(layers) + [home]
        configs = config_shortest_path(full, cfg.weights, labels=["start"] + list(seq.order) + ["goal"])
    metrics = {
        "n_targets": len(targets),
        "n_clusters": len(clusters),
        "ball_diameter": d,
        "base_tour_length": tour.length,
        "joint_path_length": configs.length,
        "greedy_joint_path_length": greedy_first_length(full, cfg.weights),
        "cluster_contiguous": is_cluster_contiguous(seq.order, clusters),
        "ik_solutions_per_target": [len(l) for l in layers],
        "all_in_ball": all(r.all_in_ball for r in reports),
    }
    if db is not None:
        metrics["fkr_marked_voxels"] = db.count
    return PipelineResult(seg, clusters, placements, tour, seq, configs, reports, dict(timer.times), metrics)


def write_bundled_macs(db: FkrDatabase, path) -> None:
    """Compute and store the convex subset of a database (used to refresh package data)."""
    m, hull = find_macs(DigitalSet.from_grid(db.grid))
    Path(path).write_text(json.dumps(macs_to_json(m, hull)))


"""Command line interface.

Exit codes: 0 success, 2 bad input, 3 infeasible (ball fit, height matching,
unreachable target), 4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import pipeline
from .ballfit import BallSegment, CollisionPlanes, fit_ball_segment
from .clustering import cluster_targets, clusters_from_json, clusters_to_json
from .errors import FormatError, InputError, MmseqError
from .fkr import build_fkr, default_region, read_fkr, write_fkr
from .macs import ConvexPolytope, DigitalSet, dumps_macs, find_macs
from .targets import KINDS, WallGeometry, gen_targets, load_targets, parse_targets

log = logging.getLogger("mmseq")


def _opt_float(text: str):
    """Float, or 'none' to disable a collision plane."""
    if text.lower() in ("none", "off"):
        return None
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'none', got {text!r}") from None


def _read_json(path, what):
    try:
        text = sys.stdin.read() if str(path) == "-" else Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {what} {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _read_targets(path):
    if str(path) == "-":
        return parse_targets(sys.stdin.read(), "<stdin>")
    return load_targets(path)


def _emit(text: str, out):
    if out is None or str(out) == "-":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")


def _flag(p, name, **kw):
    """Register ``--a-b`` and ``--a_b`` for config field ``a_b``."""
    dashed = "--" + name.replace("_", "-")
    names = [dashed] if "_" not in name else [dashed, "--" + name]
    p.add_argument(*names, dest=name, default=argparse.SUPPRESS, **kw)


def _add_config_flags(p):
    p.add_argument("--config", help="JSON config file; flags override its values")
    _flag(p, "chain", help="chain JSON file (default: bundled arm)")
    _flag(p, "fkr", help="fkr database file")
    _flag(p, "macs", help="precomputed convex subset JSON")
    _flag(p, "region", type=float, nargs=6, metavar="V", help="x0 y0 z0 x1 y1 z1")
    _flag(p, "resolution", type=float)
    _flag(p, "theta", type=float, help="pyramid half-angle, degrees")
    _flag(p, "x_offset", type=_opt_float)
    _flag(p, "z_offset", type=_opt_float)
    _flag(p, "diameter", type=float, help="ball diameter override (<= fitted)")
    _flag(p, "delta_mode", choices=pipeline.DELTA_MODES)
    _flag(p, "h_scale", type=float)
    _flag(p, "weights", type=float, nargs=6, metavar="W")
    _flag(p, "seed", type=int)
    _flag(p, "depot", type=float, nargs=2, metavar="V")
    _flag(p, "home", type=float, nargs=6, metavar="Q")
    _flag(p, "roll_samples", type=int)
    _flag(p, "restarts", type=int)
    _flag(p, "tour_restarts", type=int)


def config_from_args(args) -> pipeline.PipelineConfig:
    doc = {}
    if getattr(args, "config", None):
        doc.update(pipeline.load_config(args.config).to_dict())
    for name in pipeline.PipelineConfig.__dataclass_fields__:
        if hasattr(args, name):
            value = getattr(args, name)
            if name == "region" and value is not None:
                value = [value[:3], value[3:]]
            doc[name] = value
    return pipeline.PipelineConfig.from_dict(doc)


# --- subcommands --------------------------------------------------------------------


def cmd_build_fkr(args):
    cfg = config_from_args(args)
    chain = pipeline.resolve_chain(cfg)
    region = default_region(chain) if cfg.region is None else tuple(np.asarray(cfg.region, dtype=float))

    def progress(done, total):
        log.info("fkr: %d/%d voxels evaluated", done, total)

    t0 = time.perf_counter()
    db = build_fkr(
        chain, region, cfg.resolution, theta=cfg.theta_rad, roll_samples=cfg.roll_samples,
        restarts=cfg.restarts, seed=cfg.seed, progress=progress,
    )
    write_fkr(db, args.output)
    print(json.dumps({
        "output": str(args.output), "dims": list(db.grid.dims), "marked": db.count,
        "seconds": round(time.perf_counter() - t0, 3),
    }))


def cmd_macs(args):
    cfg = config_from_args(args)
    chain = pipeline.resolve_chain(cfg)
    db = pipeline.resolve_fkr(cfg, chain) if args.fkr_file is None else read_fkr(args.fkr_file)
    m, hull = find_macs(DigitalSet.from_grid(db.grid))
    _emit(dumps_macs(m, hull), args.output)


def cmd_fit_balls(args):
    doc = _read_json(args.hull, "hull")
    rows = doc["halfspaces"] if isinstance(doc, dict) and "halfspaces" in doc else doc
    hull = ConvexPolytope.from_json(rows)
    if args.targets is not None:
        z = _read_targets(args.targets).positions[:, 2]
        z_min, z_max = float(z.min()), float(z.max())
    elif args.z_min is not None and args.z_max is not None:
        z_min, z_max = args.z_min, args.z_max
    else:
        raise InputError("give --targets or both --z-min and --z-max")
    seg = fit_ball_segment(hull, z_min, z_max, CollisionPlanes(args.x_offset, args.z_offset))
    _emit(json.dumps(seg.to_json()), args.output)


def cmd_cluster(args):
    targets = _read_targets(args.targets)
    if args.segment is not None:
        d = BallSegment.from_json(_read_json(args.segment, "ball segment")).diameter
        if args.diameter is not None:
            d = min(d, args.diameter)
    elif args.diameter is not None:
        d = args.diameter
    else:
        raise InputError("give --diameter or --segment")
    clusters = cluster_targets(targets.positions, d, safe=args.delta_mode == "safe")
    _emit(json.dumps({"diameter": d, "clusters": clusters_to_json(clusters)}), args.output)


def cmd_sequence(args):
    cfg = config_from_args(args)
    targets = _read_targets(args.targets)
    seg = BallSegment.from_json(_read_json(args.segment, "ball segment"))
    doc = _read_json(args.clusters, "clusters")
    clusters = clusters_from_json(doc["clusters"] if isinstance(doc, dict) else doc)
    d = float(doc.get("diameter", seg.diameter)) if isinstance(doc, dict) else seg.diameter
    seen = sorted(i for c in clusters for i in c.members)
    if seen != list(range(len(targets))):
        raise InputError("clusters do not partition the target indices")
    result = pipeline.plan_sequence(targets, clusters, seg, d, cfg)
    _emit(result.dumps(stable=args.stable), args.output)


def cmd_run(args):
    cfg = config_from_args(args)
    targets = _read_targets(args.targets)
    result = pipeline.plan(targets, cfg)
    _emit(result.dumps(stable=args.stable), args.output)
    if args.plot_data:
        Path(args.plot_data).write_text(json.dumps(result.plot_data(targets)) + "\n")


def cmd_gen_targets(args):
    geom = WallGeometry(args.radius, math.radians(args.arc), args.z_low, args.z_high, args.depth)
    ts = gen_targets(
        args.kind, args.n, math.radians(args.theta_spread), args.seed, geom, math.radians(args.theta)
    )
    _emit(ts.dumps(), args.output)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmseq", description="Mobile manipulator multi-target planning.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-fkr", help="sample the reachability voxel database")
    _add_config_flags(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_build_fkr)

    p = sub.add_parser("macs", help="convex subset of an fkr database, as JSON")
    _add_config_flags(p)
    p.add_argument("fkr_file", nargs="?", help="fkr database (default: bundled or --fkr)")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_macs)

    p = sub.add_parser("fit-balls", help="largest ball segment inside a hull")
    p.add_argument("hull", help="macs JSON or half-space list ('-' for stdin)")
    p.add_argument("--targets", help="take z range from this targets file")
    p.add_argument("--z-min", "--z_min", dest="z_min", type=float)
    p.add_argument("--z-max", "--z_max", dest="z_max", type=float)
    p.add_argument("--x-offset", "--x_offset", dest="x_offset", type=_opt_float, default=0.0)
    p.add_argument("--z-offset", "--z_offset", dest="z_offset", type=_opt_float, default=0.0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_fit_balls)

    p = sub.add_parser("cluster", help="clique-cover clustering of targets")
    p.add_argument("targets")
    p.add_argument("--diameter", type=float)
    p.add_argument("--segment", help="ball segment JSON (its diameter is used)")
    p.add_argument("--delta-mode", "--delta_mode", dest="delta_mode", choices=pipeline.DELTA_MODES, default="planar")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("sequence", help="base poses, tour and IK sequence for given clusters")
    _add_config_flags(p)
    p.add_argument("targets")
    p.add_argument("--clusters", required=True)
    p.add_argument("--segment", required=True)
    p.add_argument("--stable", action="store_true", help="omit timings")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sequence)

    p = sub.add_parser("run", help="full pipeline")
    _add_config_flags(p)
    p.add_argument("targets")
    p.add_argument("--stable", action="store_true", help="omit timings for byte-stable output")
    p.add_argument("--plot-data", "--plot_data", dest="plot_data", help="write plot arrays here")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gen-targets", help="synthetic targets file")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("-n", type=int, default=183)
    p.add_argument("--theta-spread", "--theta_spread", dest="theta_spread", type=float, default=5.0, help="degrees")
    p.add_argument("--theta", type=float, default=10.0, help="degrees")
    p.add_argument("--seed", type=int, default=0)
    g = WallGeometry()
    p.add_argument("--radius", type=float, default=g.radius)
    p.add_argument("--arc", type=float, default=math.degrees(g.arc), help="degrees")
    p.add_argument("--z-low", "--z_low", dest="z_low", type=float, default=g.z_low)
    p.add_argument("--z-high", "--z_high", dest="z_high", type=float, default=g.z_high)
    p.add_argument("--depth", type=float, default=g.depth)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_gen_targets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except MmseqError as exc:
        print(f"mmseq: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (KeyError, TypeError) as exc:
        print(f"mmseq: error: malformed input: {exc!r}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command line interface: ``hotemboss run|validate|mesh-info``.

Exit codes: 0 success, 1 configuration or input error, 2 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2


def _set_threads(args) -> None:
    n = 1 if args.sequential else args.threads
    if n is None:
        return
    import numba

    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def cmd_validate(args) -> int:
    from .config import ConfigError, read_config_document, validate_config

    path = Path(args.config)
    try:
        doc = read_config_document(path)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    diags = validate_config(doc, path.parent)
    for d in diags:
        print(d)
    n_err = sum(d.level == "error" for d in diags)
    print(f"{path}: {n_err} error(s), {len(diags) - n_err} warning(s)")
    return EXIT_CONFIG if n_err else EXIT_OK


def cmd_mesh_info(args) -> int:
    from .mesh import MeshError, load_mesh

    try:
        mesh = load_mesh(args.mesh)
    except (OSError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(mesh.summary(), indent=2))
    return EXIT_OK


def cmd_run(args) -> int:
    from .config import ConfigError, load_config
    from .driver import Simulation, SimulationError

    _set_threads(args)
    try:
        cfg = load_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        for d in getattr(exc, "diagnostics", []):
            print(f"  {d}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.output_dir) if args.output_dir else (cfg.output_dir or Path("output"))
    try:
        sim = Simulation(cfg, output_dir=out)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.perf_counter()
    try:
        summary = sim.run(checkpoint_every=args.checkpoint_every, resume=args.resume)
    except SimulationError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:  # unusable checkpoint
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    wall = time.perf_counter() - t0
    print(f"{summary.n_steps} steps, cooling ended at t = {summary.cooling_end_time} s, "
          f"wall time {wall:.1f} s; outputs in {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hotemboss", description="Cooling and demolding of hot-embossed polymer parts.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a simulation")
    r.add_argument("config", help="JSON configuration file")
    r.add_argument("--output-dir", help="output directory (overrides the config)")
    r.add_argument("--threads", type=int, default=None, help="worker threads for compiled kernels")
    r.add_argument("--sequential", action="store_true",
                   help="single-threaded certification mode (bit-reproducible)")
    r.add_argument("--checkpoint-every", type=int, default=0, metavar="K", help="write a checkpoint every K steps")
    r.add_argument("--resume", help="continue from a checkpoint file")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a configuration and print diagnostics")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    m = sub.add_parser("mesh-info", help="print a mesh summary")
    m.add_argument("mesh")
    m.set_defaults(func=cmd_mesh_info)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

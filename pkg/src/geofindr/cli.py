"""Command-line entry point: ``geofindr {audit,sweep,simulate-world,make-deadzone,fetch-atlas}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .audit import EXIT_FATAL, AuditConfig, run_audit
from .catalog import (
    ATLAS_URL_ENV,
    AtlasClient,
    CatalogError,
    exclude_zone,
    load_catalog,
    load_mesh,
    write_catalog,
    write_mesh,
)
from .geodesy import GeoPoint, great_circle_km
from .probe import IcmpBackend, ReplayBackend, SimulatedBackend
from .world import DensitySpec, declared_positions, generate_world, load_scenario, save_scenario

log = logging.getLogger("geofindr")

EXIT_USAGE = 64
SEED_ENV = "GEOFINDR_SEED"
SWEEP_PARAMETERS = {
    "tolerance": "tolerance_km",
    "zone_size": "zone_size_km",
    "nb_lm": "nb_lm",
    "interval_percent": "interval_percent",
}
SWEEP_COLUMNS = [
    "row_type", "parameter", "value", "repetition", "declared_name", "declared_lat", "declared_lon",
    "status", "converged", "nb_iterations", "audit_time_s", "distance_real_estimated_km",
    "distance_real_declared_km", "distance_estimated_declared_km", "lie_detected", "satisfactory",
    "smre_km",
]
AGGREGATED = ["nb_iterations", "audit_time_s", "distance_real_estimated_km",
              "distance_real_declared_km", "distance_estimated_declared_km", "smre_km"]


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _point(text: str) -> GeoPoint:
    try:
        return GeoPoint.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_audit_flags(p: argparse.ArgumentParser) -> None:
    # defaults are None so config-file values can show through
    p.add_argument("--config", type=Path, help="JSON file with default values for any flag")
    p.add_argument("--tolerance", dest="tolerance_km", type=float)
    p.add_argument("--zone-size", dest="zone_size_km", type=float)
    p.add_argument("--nb-lm", dest="nb_lm", type=int)
    p.add_argument("--interval-percent", dest="interval_percent", type=float)
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--backend", choices=["sim", "replay", "icmp"])
    p.add_argument("--scenario", type=Path, help="simulator scenario JSON (sim backend)")
    p.add_argument("--replay", type=Path, help="recorded RTT fixture (replay backend)")
    p.add_argument("--catalog", help="landmark JSON-lines file, or 'atlas'")
    p.add_argument("--mesh", help="mesh CSV file, or 'atlas'")
    p.add_argument("--proxy", dest="proxy_address", help="provider proxy / public address for in-cloud RTT")
    p.add_argument("--true-position", type=_point, help="ground truth lat,lon (controlled runs only)")
    p.add_argument("--workers", type=int, help="parallel measurements per iteration")
    p.add_argument("--seed", type=int, help=f"simulator seed (env {SEED_ENV})")


FLAG_DEFAULTS = {
    "tolerance_km": 100.0,
    "zone_size_km": 1000.0,
    "nb_lm": 16,
    "interval_percent": 35.0,
    "max_iterations": 20,
    "backend": "sim",
    "workers": 1,
    "repetitions": 1,
    "parallel": 1,
}
CONFIG_KEYS = set(FLAG_DEFAULTS) | {
    "declared", "scenario", "replay", "catalog", "mesh", "proxy_address", "true_position", "seed",
    "output", "parameter", "values", "repetitions", "positions", "parallel",
}


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Merge flags over the config file over built-in defaults."""
    merged = dict(FLAG_DEFAULTS)
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(data) - CONFIG_KEYS
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for key in ("declared", "true_position"):
            if isinstance(data.get(key), str):
                data[key] = GeoPoint.parse(data[key])
            elif isinstance(data.get(key), list):
                data[key] = GeoPoint(*data[key])
        for key in ("scenario", "replay", "output", "positions"):
            if data.get(key) is not None:
                data[key] = Path(data[key])
        merged.update(data)
    for key, value in vars(args).items():
        if value is not None or key not in merged:
            merged[key] = value
    if merged.get("seed") is None and os.environ.get(SEED_ENV):
        merged["seed"] = int(os.environ[SEED_ENV])
    return argparse.Namespace(**merged)


@dataclass
class Inputs:
    catalog: object
    mesh: object
    world: object = None


def _load_inputs(args) -> Inputs:
    if args.backend == "sim":
        if not args.scenario:
            raise UsageError("--scenario is required with the sim backend")
        scenario = load_scenario(args.scenario, args.catalog, args.mesh)
        world = scenario.world
        if args.seed is not None:
            world = dataclasses.replace(world, seed=args.seed)
        return Inputs(scenario.catalog, scenario.mesh, world)
    if not args.catalog or not args.mesh:
        raise UsageError(f"--catalog and --mesh are required with the {args.backend} backend")
    catalog = load_catalog(args.catalog)
    return Inputs(catalog, load_mesh(args.mesh, catalog))


def _backend(args, inputs: Inputs, seed_offset: int = 0):
    if args.backend == "sim":
        world = inputs.world
        if seed_offset:
            world = dataclasses.replace(world, seed=world.seed + seed_offset)
        return SimulatedBackend(world)
    if args.backend == "replay":
        if not args.replay:
            raise UsageError("--replay is required with the replay backend")
        return ReplayBackend.from_file(args.replay)
    return IcmpBackend()


def _config(args, declared: GeoPoint) -> AuditConfig:
    try:
        return AuditConfig(
            declared_position=declared,
            tolerance_km=args.tolerance_km,
            zone_size_km=args.zone_size_km,
            nb_lm=args.nb_lm,
            interval_percent=args.interval_percent,
            max_iterations=args.max_iterations,
            backend=args.backend,
            proxy_address=args.proxy_address,
            workers=args.workers,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _truth(args, inputs: Inputs) -> GeoPoint | None:
    if args.true_position is not None:
        return args.true_position
    return inputs.world.true_vm_position if inputs.world is not None else None


# --------------------------------------------------------------------------


def cmd_audit(args) -> int:
    if args.declared is None:
        raise UsageError("--declared lat,lon is required")
    inputs = _load_inputs(args)
    config = _config(args, args.declared)
    report = run_audit(config, inputs.catalog, inputs.mesh, _backend(args, inputs),
                       true_position=_truth(args, inputs))
    if not args.quiet:
        print(report.summary())
    if args.output:
        Path(args.output).write_text(report.to_json() + "\n")
    elif args.json:
        print(report.to_json())
    return report.exit_code


def _parse_values(text: str, parameter: str) -> list:
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        if step <= 0:
            raise UsageError("range step must be positive")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        values = [start + i * step for i in range(count)]
    else:
        values = [float(v) for v in text.split(",") if v.strip()]
    if parameter == "nb_lm":
        return [int(v) for v in values]
    return values


def _load_positions(path: Path | None) -> list[tuple[str, GeoPoint]]:
    if path is None:
        return declared_positions()
    try:
        data = json.loads(Path(path).read_text())
        items = data["positions"] if isinstance(data, dict) else data
        positions = [(p["name"], GeoPoint(p["lat"], p["lon"])) for p in items]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read positions from {path}: {exc}") from exc
    if not positions:
        raise UsageError(f"{path}: no declared positions")
    return positions


def _run_row(args, inputs, parameter, value, repetition, name, declared, run_index) -> dict:
    row = {"row_type": "run", "parameter": parameter, "value": value, "repetition": repetition,
           "declared_name": name, "declared_lat": declared.lat, "declared_lon": declared.lon}
    try:
        overrides = {SWEEP_PARAMETERS[parameter]: value}
        config = dataclasses.replace(_config(args, declared), **overrides)
        report = run_audit(config, inputs.catalog, inputs.mesh,
                           _backend(args, inputs, seed_offset=run_index),
                           true_position=_truth(args, inputs))
    except Exception as exc:  # one failed run must not stop the sweep
        log.error("run %d (%s=%s, %s) failed: %s", run_index, parameter, value, name, exc)
        row["status"] = f"failed: {exc}"
        return row
    row.update({
        "status": report.status,
        "converged": report.converged,
        "nb_iterations": report.nb_iterations,
        "audit_time_s": report.audit_time_s,
        "distance_real_estimated_km": report.distance_real_estimated_km,
        "distance_real_declared_km": report.distance_real_declared_km,
        "distance_estimated_declared_km": report.distance_estimated_declared_km,
        "lie_detected": report.lie_detected,
        "satisfactory": report.satisfactory,
        "smre_km": report.smre_km,
    })
    return row


def _aggregate(rows: list[dict], parameter: str, value) -> list[dict]:
    out = []
    for kind in ("mean", "stddev"):
        agg = {"row_type": kind, "parameter": parameter, "value": value}
        for col in AGGREGATED:
            nums = [r[col] for r in rows if isinstance(r.get(col), (int, float))]
            if kind == "mean":
                agg[col] = statistics.fmean(nums) if nums else None
            else:
                agg[col] = statistics.stdev(nums) if len(nums) > 1 else (0.0 if nums else None)
        for col in ("converged", "lie_detected", "satisfactory"):
            flags = [r[col] for r in rows if isinstance(r.get(col), bool)]
            if kind == "mean" and flags:
                agg[col] = sum(flags) / len(flags)
        out.append(agg)
    return out


def sweep_rows(args, inputs, parameter: str, values: list, positions, repetitions: int,
               parallel: int = 1) -> list[dict]:
    """Run every (value, repetition, position) audit; per-value mean/stddev rows follow each group."""
    jobs = []
    for value in values:
        for rep in range(repetitions):
            for name, declared in positions:
                jobs.append((value, rep, name, declared, len(jobs)))

    def work(job):
        value, rep, name, declared, index = job
        return _run_row(args, inputs, parameter, value, rep, name, declared, index)

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(job) for job in jobs]

    rows = []
    for value in values:
        group = [r for r in results if r["value"] == value]
        rows.extend(group)
        rows.extend(_aggregate(group, parameter, value))
    return rows


def write_sweep_csv(rows: list[dict], fh) -> None:
    writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in SWEEP_COLUMNS})


def cmd_sweep(args) -> int:
    if args.parameter not in SWEEP_PARAMETERS:
        raise UsageError(f"--parameter must be one of {', '.join(SWEEP_PARAMETERS)}")
    values = _parse_values(args.values or "", args.parameter)
    if not values:
        raise UsageError("--values must not be empty")
    if args.repetitions < 1:
        raise UsageError("--repetitions must be >= 1")
    if args.backend != "sim":
        log.warning("sweeping over the %s backend sends real traffic for every run", args.backend)
    inputs = _load_inputs(args)
    positions = _load_positions(args.positions)
    rows = sweep_rows(args, inputs, args.parameter, values, positions, args.repetitions, args.parallel)
    if args.output:
        with open(args.output, "w", newline="") as fh:
            write_sweep_csv(rows, fh)
    else:
        write_sweep_csv(rows, sys.stdout)
    return 0


def cmd_simulate_world(args) -> int:
    data = json.loads(Path(args.density).read_text()) if args.density else {}
    if args.seed is not None:
        data["seed"] = args.seed
    elif os.environ.get(SEED_ENV):
        data["seed"] = int(os.environ[SEED_ENV])
    if args.jitter is not None:
        data["jitter_fraction"] = args.jitter
    if args.exclude_radius is not None:
        data["exclusion_radius_km"] = args.exclude_radius
    try:
        spec = DensitySpec.from_dict(data)
        world = generate_world(spec)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad density spec: {exc}") from exc
    paths = save_scenario(world, args.out_dir, name=args.name)
    print(f"{len(world.landmarks)} landmarks, VM at {world.true_vm_position}")
    for kind, path in paths.items():
        print(f"{kind:9s} {path}")
    return 0


def cmd_make_deadzone(args) -> int:
    catalog = load_catalog(args.catalog)
    filtered = exclude_zone(catalog, args.center, args.radius_km)
    write_catalog(filtered, args.out_catalog)
    removed = len(catalog) - len(filtered)
    print(f"removed {removed} of {len(catalog)} landmarks within {args.radius_km:g} km of {args.center}")
    if args.mesh:
        mesh = load_mesh(args.mesh, catalog).restrict(filtered)
        write_mesh(mesh, args.out_mesh)
        print(f"mesh entries kept: {len(mesh)}")
    if len(filtered):
        nearest = sorted(great_circle_km(args.center, lm.position) for lm in filtered)[:2]
        print("nearest remaining landmarks: " + ", ".join(f"{d:.1f} km" for d in nearest))
    return 0


def cmd_fetch_atlas(args) -> int:
    client = AtlasClient(args.url)
    catalog = load_catalog(client.base_url, client=client)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_catalog(catalog, out / "landmarks.jsonl")
    print(f"{len(catalog)} anchors ({catalog.rejected} rejected) -> {out / 'landmarks.jsonl'}")
    if not args.no_mesh:
        mesh = load_mesh(client.base_url, catalog, client=client, limit=args.mesh_limit)
        write_mesh(mesh, out / "mesh.csv")
        print(f"{len(mesh)} mesh entries ({mesh.rejected} rejected) -> {out / 'mesh.csv'}")
    return 0


def build_parser() -> Parser:
    parser = Parser(prog="geofindr", description="Audit a cloud machine's declared position from network delays.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=Parser)

    p = sub.add_parser("audit", help="locate this machine and check a declared position")
    p.add_argument("--declared", type=_point, help="declared position lat,lon")
    _add_audit_flags(p)
    p.add_argument("--output", "-o", help="write the JSON report here")
    p.add_argument("--json", action="store_true", help="print the JSON report to stdout")
    p.add_argument("--quiet", "-q", action="store_true")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("sweep", help="vary one setup parameter over many declared positions")
    p.add_argument("--parameter", choices=sorted(SWEEP_PARAMETERS))
    p.add_argument("--values", help="comma list, or start:stop:step (inclusive)")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--positions", type=Path, help="JSON list of {name, lat, lon}; default: 24 reference sites")
    p.add_argument("--parallel", type=int)
    p.add_argument("--output", "-o", help="CSV output (default stdout)")
    _add_audit_flags(p)
    p.set_defaults(func=cmd_sweep, declared=None)

    p = sub.add_parser("simulate-world", help="generate a synthetic landmark world")
    p.add_argument("--density", type=Path, help="density spec JSON (defaults if omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--jitter", type=float)
    p.add_argument("--exclude-radius", type=float, help="carve a landmark-free zone around the VM (km)")
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.add_argument("--name", default="world")
    p.set_defaults(func=cmd_simulate_world)

    p = sub.add_parser("make-deadzone", help="drop every landmark within a radius of a point")
    p.add_argument("--catalog", required=True)
    p.add_argument("--mesh")
    p.add_argument("--center", type=_point, required=True)
    p.add_argument("--radius-km", type=float, required=True)
    p.add_argument("--out-catalog", required=True)
    p.add_argument("--out-mesh")
    p.set_defaults(func=cmd_make_deadzone)

    p = sub.add_parser("fetch-atlas", help="snapshot RIPE Atlas anchors and their ping mesh")
    p.add_argument("--url", help=f"API base URL (env {ATLAS_URL_ENV})")
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.add_argument("--mesh-limit", type=int, help="only fetch the mesh towards the first N anchors")
    p.add_argument("--no-mesh", action="store_true")
    p.set_defaults(func=cmd_fetch_atlas)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        if args.command in ("audit", "sweep"):
            args = _resolve(args)
        if args.command == "make-deadzone" and args.mesh and not args.out_mesh:
            raise UsageError("--out-mesh is required with --mesh")
        if args.command == "make-deadzone" and args.radius_km < 0:
            raise UsageError("--radius-km must be non-negative")
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"geofindr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CatalogError, OSError) as exc:
        print(f"geofindr: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())

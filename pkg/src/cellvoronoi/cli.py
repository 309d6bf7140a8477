"""Command-line entry point.

Subcommands mirror the offline/online split: ``simulate`` writes a synthetic
network and scans, ``precompute`` builds a table from a network, ``localize``
and ``evaluate`` consume table + network + scans, and ``sweep`` runs the grid
size or cell density experiments end to end.
"""

from __future__ import annotations

import argparse
import csv
import functools
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .errors import LocatorError, NoUsableCellsError
from .evaluation import BenchmarkReport, comparison_report, evaluate, sweep_density, sweep_grid_size
from .locator import localize
from .network import load_network, write_network
from .precompute import GridSpec, default_grid_spec, export_json, load_table, precompute, save_table
from .scans import read_scans, write_scans
from .simulator import SimConfig, area_spec, cell_density, generate_dataset, generate_network

log = logging.getLogger("cellvoronoi")

RESULT_COLUMNS = [
    "scan_id", "est_lat", "est_lon", "max_score", "achievable_score",
    "n_max_points", "ambiguity_extent_m", "fallback_used", "error_m",
]


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _bbox(text: str) -> tuple[float, float, float, float]:
    vals = _floats(text)
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("bbox needs min_x,min_y,max_x,max_y")
    return tuple(vals)


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("simulation")
    g.add_argument("--config", type=Path, help="SimConfig JSON or TOML file")
    g.add_argument("--density", type=float, help="cells per km^2")
    g.add_argument("--area", type=float, help="square area of interest, km^2")
    g.add_argument("--n-sites", type=int)
    g.add_argument("--sectors-per-site", type=int)
    g.add_argument("--cells-per-sector", type=int)
    g.add_argument("--placement", choices=["uniform", "hex"])
    g.add_argument("--mode", choices=["ideal", "noisy"])
    g.add_argument("--samples", type=int, default=2000)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--seed", type=int, help="RNG seed (overrides config)")
    common.add_argument("--threads", type=int, default=1, help="worker threads, 0 = one per CPU")
    parser = argparse.ArgumentParser(prog="cellvoronoi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser = functools.partial(sub.add_parser, parents=[common])

    p = sub.add_parser("simulate", help="write a synthetic network and scan dataset")
    _add_sim_flags(p)
    p.add_argument("--out", type=Path, default=Path("sim"))
    p.add_argument("--network-format", choices=["csv", "json"], default="csv")
    p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")

    p = sub.add_parser("precompute", help="build a precompute table for a network")
    p.add_argument("--network", type=Path, required=True)
    p.add_argument("--step", type=float, default=50.0)
    p.add_argument("--bbox", type=_bbox, help="min_x,min_y,max_x,max_y in planar meters (write --bbox=-1,... for negatives)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--json-debug", type=Path, help="also write a JSON dump of every record")

    p = sub.add_parser("localize", help="localize every scan of a scan file")
    p.add_argument("--table", type=Path, required=True)
    p.add_argument("--network", type=Path, required=True)
    p.add_argument("--scans", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("evaluate", help="compare against the Cell ID and Centroid baselines")
    p.add_argument("--table", type=Path, required=True)
    p.add_argument("--network", type=Path, required=True)
    p.add_argument("--scans", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--cdf-dir", type=Path, help="write gnuplot CDF data files here")

    p = sub.add_parser("sweep", help="grid-size or cell-density sweep on synthetic data")
    p.add_argument("kind", choices=["grid", "density"])
    _add_sim_flags(p)
    p.add_argument("--steps", type=_floats, default=[25.0, 50.0, 100.0, 200.0])
    p.add_argument("--densities", type=_floats, default=[21.0, 50.0, 100.0, 224.0])
    p.add_argument("--step", type=float, default=50.0, help="grid step for the density sweep")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    return parser


def _sim_config(args) -> SimConfig:
    d = SimConfig.from_file(args.config).to_dict() if args.config else SimConfig().to_dict()
    if args.area is not None:
        h = (args.area * 1e6) ** 0.5 / 2
        d["area"] = [-h, -h, h, h]
    if args.density is not None:
        d["density"] = args.density
    if args.n_sites is not None:
        d["n_sites"] = args.n_sites
        if args.density is None:
            d["density"] = None
    for key in ("sectors_per_site", "cells_per_sector", "placement", "mode"):
        if getattr(args, key) is not None:
            d[key] = getattr(args, key)
    if args.seed is not None:
        d["rng_seed"] = args.seed
    return SimConfig.from_dict(d)


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _require(parser, *paths: Path) -> None:
    for p in paths:
        if not p.exists():
            parser.error(f"no such file or directory: {p}")


def cmd_simulate(args, parser) -> int:
    cfg = _sim_config(args)
    if args.dump_config:
        print(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
        return 0
    if args.samples <= 0:
        parser.error("--samples must be > 0")
    db = generate_network(cfg)
    data = generate_dataset(cfg, args.samples, db, threads=args.threads)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.network_format == "json":
        write_network(db, out / "network.json", "json")
    else:
        write_network(db, out / "network", "csv")
    write_scans(out / "scans.csv", data.scans, db)
    box = area_spec(cfg, db)
    _write_json(out / "sim_config.json", {
        "version": __version__,
        "config": cfg.to_dict(),
        "samples_requested": args.samples,
        "samples_written": len(data),
        "no_coverage": data.n_no_coverage,
        "n_sites": len(db.sites),
        "n_cells": len(db.cells),
        "cell_density": cell_density(db, cfg.area_km2),
        "area_bbox_planar": [box.min_x, box.min_y, box.max_x, box.max_y],
    })
    print(f"{len(db.sites)} sites, {len(db.cells)} cells "
          f"({cell_density(db, cfg.area_km2):.1f}/km^2), {len(data)} scans -> {out}")
    return 0


def cmd_precompute(args, parser) -> int:
    _require(parser, args.network)
    db = load_network(args.network)
    if args.bbox:
        spec = GridSpec(*args.bbox, step=args.step)
    else:
        spec = default_grid_spec(db, args.step)
    table = precompute(db, spec, threads=args.threads)
    save_table(table, args.out)
    if args.json_debug:
        export_json(table, args.json_debug)
    _write_json(Path(str(args.out) + ".config.json"), {
        "version": __version__, "command": "precompute", "network": str(args.network),
        "grid": {"min_x": spec.min_x, "min_y": spec.min_y, "max_x": spec.max_x, "max_y": spec.max_y,
                 "step": spec.step, "nx": spec.nx, "ny": spec.ny},
        "bbox_source": "flag" if args.bbox else "default", "threads": args.threads,
        "network_fingerprint": table.network_fingerprint.hex(),
    })
    print(f"grid {spec.nx} x {spec.ny} = {spec.size} points, step {spec.step:g} m, "
          f"{len(db.sites)} sites, {len(db.cells)} cells -> {args.out}")
    return 0


def cmd_localize(args, parser) -> int:
    _require(parser, args.table, args.network, args.scans)
    db = load_network(args.network)
    table = load_table(args.table, db)
    scans = read_scans(args.scans, db)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    failed = 0
    with args.out.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for k, scan in enumerate(scans):
            sid = scan.scan_id if scan.scan_id is not None else str(k)
            try:
                est = localize(scan, table, db)
            except NoUsableCellsError as exc:
                log.warning("%s", exc)
                failed += 1
                w.writerow([sid] + [""] * (len(RESULT_COLUMNS) - 1))
                continue
            err = ""
            if scan.ground_truth is not None:
                p, t = est.position, scan.ground_truth
                err = repr(((p.x - t.x) ** 2 + (p.y - t.y) ** 2) ** 0.5)
            w.writerow([
                sid, repr(est.geo.lat), repr(est.geo.lon), est.max_score, est.achievable_score,
                est.n_max_points, repr(est.ambiguity_extent), int(est.fallback_used), err,
            ])
    _write_json(Path(str(args.out) + ".config.json"), {
        "version": __version__, "command": "localize",
        "table": str(args.table), "network": str(args.network), "scans": str(args.scans),
        "grid": {"nx": table.spec.nx, "ny": table.spec.ny, "step": table.spec.step},
        "n_scans": len(scans), "n_failed": failed,
    })
    print(f"localized {len(scans) - failed}/{len(scans)} scans -> {args.out}")
    return 0


def cmd_evaluate(args, parser) -> int:
    _require(parser, args.table, args.network, args.scans)
    db = load_network(args.network)
    table = load_table(args.table, db)
    scans = read_scans(args.scans, db)
    ev = evaluate(scans, table, db)
    report = comparison_report(ev, {
        "version": __version__, "command": "evaluate",
        "table": str(args.table), "network": str(args.network), "scans": str(args.scans),
        "grid": {"min_x": table.spec.min_x, "min_y": table.spec.min_y, "max_x": table.spec.max_x,
                 "max_y": table.spec.max_y, "step": table.spec.step},
    })
    report.write(args.out, args.format)
    if args.cdf_dir:
        report.write_cdf_files(args.cdf_dir)
    for m, s in ev.stats.items():
        print(f"{m:10s} median {s.median_m:8.1f} m  mean {s.mean_m:8.1f} m  n={s.n}")
    return 0


def cmd_sweep(args, parser) -> int:
    cfg = _sim_config(args)
    config = {"version": __version__, "command": f"sweep {args.kind}", "sim": cfg.to_dict(),
              "samples": args.samples}
    if args.kind == "grid":
        config["steps"] = args.steps
        rows = sweep_grid_size(args.steps, cfg, args.samples)
        key, cols = "grid_size", ("step_m", "median_m", "mean_runtime_us")
    else:
        config["densities"] = args.densities
        config["step"] = args.step
        rows = sweep_density(args.densities, cfg, args.samples, args.step)
        key, cols = "density", ("density", "crescendo_median_m", "cell_id_median_m", "centroid_median_m")
    report = BenchmarkReport(config=config, sweeps={key: rows})
    report.write(args.out, args.format)
    for r in rows:
        print("  ".join(f"{c}={r[c]:.1f}" for c in cols))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "precompute": cmd_precompute,
    "localize": cmd_localize,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def _setup_logging(verbose: int) -> None:
    level = os.environ.get("CRESCENDO_LOG", "").upper() or None
    if level is None:
        level = ["WARNING", "INFO", "DEBUG"][min(verbose, 2)]
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def run(argv: list[str] | None = None) -> int:
    """Run the CLI and return the exit code (2 for usage errors, 1 for failures)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args.verbose)
    try:
        return COMMANDS[args.command](args, parser)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (LocatorError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())

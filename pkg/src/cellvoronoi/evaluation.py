"""Error statistics, method comparison and parameter sweeps."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NoUsableCellsError, ValidationError
from .locator import cell_id_baseline, centroid_baseline, localize, usable_entries
from .network import NetworkDB, PlanarPoint, Scan
from .precompute import PrecomputeTable, precompute
from .simulator import Dataset, SimConfig, area_spec, cell_density, generate_dataset, generate_network, rescan

log = logging.getLogger(__name__)

METHODS = ("crescendo", "cell_id", "centroid")
ERROR_METRIC = "euclidean planar distance (m) in the network's local projection"


@dataclass
class ErrorStats:
    n: int
    median_m: float
    mean_m: float
    p75_m: float
    p90_m: float
    max_m: float
    cdf: list[tuple[float, float]]
    mean_runtime_us: float

    @classmethod
    def from_errors(cls, errors: Sequence[float], runtimes_us: Sequence[float] = ()) -> ErrorStats:
        if len(errors) == 0:
            raise ValidationError("no errors to summarise")
        e = np.sort(np.asarray(errors, dtype=float))
        n = len(e)
        cdf = [(float(v), (k + 1) / n) for k, v in enumerate(e)]
        return cls(
            n=n,
            median_m=float(np.median(e)),
            mean_m=float(e.mean()),
            p75_m=float(np.percentile(e, 75)),
            p90_m=float(np.percentile(e, 90)),
            max_m=float(e[-1]),
            cdf=cdf,
            mean_runtime_us=float(np.mean(runtimes_us)) if len(runtimes_us) else math.nan,
        )

    def summary(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("cdf")
        return d


@dataclass
class SampleResult:
    scan_id: str | None
    estimate: object  # LocationEstimate
    errors: dict[str, float]


@dataclass
class Evaluation:
    stats: dict[str, ErrorStats]
    n_samples: int
    n_excluded: int
    n_dropped_entries: int
    results: list[SampleResult] = field(repr=False, default_factory=list)


def _dist(a: PlanarPoint, b: PlanarPoint) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def evaluate(dataset: Dataset | Sequence[Scan], table: PrecomputeTable, db: NetworkDB) -> Evaluation:
    """Error of every method on every scan carrying ground truth.

    Scans with no usable cell are excluded from all methods alike. Runtime is
    measured around :func:`localize` only.
    """
    scans = dataset.scans if isinstance(dataset, Dataset) else list(dataset)
    if not scans:
        raise ValidationError("empty dataset")
    table.check(db)
    errors: dict[str, list[float]] = {m: [] for m in METHODS}
    runtimes: list[float] = []
    results = []
    excluded = dropped = 0
    for scan in scans:
        if scan.ground_truth is None:
            raise ValidationError(f"scan {scan.scan_id!r} has no ground truth")
        usable, n_drop = usable_entries(scan, db)
        dropped += n_drop
        if not usable:
            excluded += 1
            continue
        t0 = time.perf_counter_ns()
        est = localize(scan, table, db)
        runtimes.append((time.perf_counter_ns() - t0) / 1e3)
        truth = scan.ground_truth
        e = {
            "crescendo": _dist(est.position, truth),
            "cell_id": _dist(cell_id_baseline(scan, db), truth),
            "centroid": _dist(centroid_baseline(scan, db), truth),
        }
        for m in METHODS:
            errors[m].append(e[m])
        results.append(SampleResult(scan.scan_id, est, e))
    if not results:
        raise NoUsableCellsError("no scan in the dataset has a usable cell")
    stats = {
        m: ErrorStats.from_errors(errors[m], runtimes if m == "crescendo" else ())
        for m in METHODS
    }
    return Evaluation(stats, len(scans), excluded, dropped, results)


def time_localize(
    scans: Sequence[Scan], tables: Sequence[PrecomputeTable], db: NetworkDB, repeats: int = 5
) -> list[float]:
    """Per table, mean over scans of the fastest of ``repeats`` calls, in microseconds.

    Calls are interleaved across tables scan by scan, so slow drift of the
    machine affects every table alike; each scan's minimum filters scheduler
    noise, which otherwise dominates on sub-millisecond calls.
    """
    usable = [s for s in scans if usable_entries(s, db)[0]]
    if not usable:
        raise NoUsableCellsError("no scan has a usable cell")
    clock = time.perf_counter_ns
    totals = [0.0] * len(tables)
    for s in usable:
        best = [math.inf] * len(tables)
        for _ in range(repeats):
            for k, t in enumerate(tables):
                t0 = clock()
                localize(s, t, db)
                dt = clock() - t0
                if dt < best[k]:
                    best[k] = dt
        for k in range(len(tables)):
            totals[k] += best[k]
    return [tot / len(usable) / 1e3 for tot in totals]


def sweep_grid_size(
    steps: Sequence[float],
    cfg: SimConfig,
    n_samples: int = 2000,
    repeats: int = 5,
    dataset: Dataset | None = None,
    db: NetworkDB | None = None,
) -> list[dict]:
    """One row per grid step over the same network and dataset."""
    for s in steps:
        if not 25 <= s <= 200:
            raise ValidationError(f"grid step {s} outside the supported sweep range [25, 200]")
    if db is None:
        db = generate_network(cfg)
    if dataset is None:
        dataset = generate_dataset(cfg, n_samples, db)
    tables, build_times = [], []
    for step in steps:
        t0 = time.perf_counter()
        tables.append(precompute(db, area_spec(cfg, db, step)))
        build_times.append(time.perf_counter() - t0)
    runtimes = time_localize(dataset.scans, tables, db, repeats)
    rows = []
    for step, table, build_s, rt in zip(steps, tables, build_times, runtimes):
        ev = evaluate(dataset, table, db)
        rows.append({
            "step_m": float(step),
            "nx": table.spec.nx,
            "ny": table.spec.ny,
            "n_points": table.spec.size,
            "median_m": ev.stats["crescendo"].median_m,
            "mean_m": ev.stats["crescendo"].mean_m,
            "mean_runtime_us": rt,
            "build_time_s": build_s,
            "n_samples": ev.stats["crescendo"].n,
        })
        log.info("grid step %g: median %.1f m, %.1f us/estimate", step, rows[-1]["median_m"], rt)
    return rows


def sweep_density(
    densities: Sequence[float],
    cfg: SimConfig,
    n_samples: int = 2000,
    step: float = 50.0,
) -> list[dict]:
    """Median error per cell density, obtained by uniformly dropping cells.

    Cells are dropped from the network generated by ``cfg`` along a single
    seeded random order, so sparser networks are subsets of denser ones. The
    true positions stay fixed; scans and tables are rebuilt per density.
    """
    for d in densities:
        if not 21 <= d <= 224:
            raise ValidationError(f"density {d} outside the supported sweep range [21, 224]")
    full = generate_network(cfg)
    area = cfg.area_km2
    dataset = generate_dataset(cfg, n_samples, full)
    order = np.random.default_rng([cfg.rng_seed, 3]).permutation(len(full.cell_ids))
    rows = []
    for d in densities:
        k = round(d * area)
        if k > len(full.cells):
            raise ValidationError(
                f"density {d} exceeds the generated network's {cell_density(full, area):.1f} cells/km^2"
            )
        if k < 1:
            raise ValidationError(f"density {d} leaves no cells")
        if k == len(full.cells):
            db, data = full, dataset
        else:
            db = full.subset(full.cell_ids[i] for i in sorted(order[:k]))
            data = rescan(dataset, full, db, cfg)
        table = precompute(db, area_spec(cfg, db, step))
        ev = evaluate(data, table, db)
        row = {
            "density": float(d),
            "actual_density": cell_density(db, area),
            "n_cells": len(db.cells),
            "n_sites": len(db.sites),
            "n_samples": ev.stats["crescendo"].n,
            "n_no_coverage": data.n_no_coverage,
        }
        for m in METHODS:
            row[f"{m}_median_m"] = ev.stats[m].median_m
        rows.append(row)
        log.info("density %g: median %.1f m", d, row["crescendo_median_m"])
    return rows


# reports


@dataclass
class BenchmarkReport:
    config: dict
    methods: dict[str, ErrorStats] = field(default_factory=dict)
    sweeps: dict[str, list[dict]] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self, include_cdf: bool = True) -> dict:
        methods = {}
        for m, s in self.methods.items():
            methods[m] = dataclasses.asdict(s) if include_cdf else s.summary()
        return {"config": self.config, "methods": methods, "sweeps": self.sweeps, "counts": self.counts}

    def write(self, path: str | Path, format: str = "json") -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if format == "json":
            path.write_text(json.dumps(self.to_dict(), indent=1, default=_json_default) + "\n", encoding="utf-8")
        elif format == "csv":
            self._write_csv(path)
            Path(str(path) + ".config.json").write_text(
                json.dumps(self.config, indent=1, default=_json_default) + "\n", encoding="utf-8"
            )
        else:
            raise ValueError(f"unknown report format {format!r}")

    def _write_csv(self, path: Path) -> None:
        with path.open("w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            if self.methods:
                cols = ["n", "median_m", "mean_m", "p75_m", "p90_m", "max_m", "mean_runtime_us"]
                w.writerow(["method"] + cols)
                for m, s in self.methods.items():
                    w.writerow([m] + [getattr(s, c) for c in cols])
            for name, rows in self.sweeps.items():
                if not rows:
                    continue
                w.writerow([])
                w.writerow([f"sweep:{name}"])
                keys = list(rows[0])
                w.writerow(keys)
                for r in rows:
                    w.writerow([r[k] for k in keys])

    def write_cdf_files(self, directory: str | Path) -> list[Path]:
        """One gnuplot-compatible two-column file per method."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        out = []
        for m, s in self.methods.items():
            p = directory / f"{m}.cdf.dat"
            lines = [f"# error_m cumulative_fraction ({m})"] + [f"{e!r} {q!r}" for e, q in s.cdf]
            p.write_text("\n".join(lines) + "\n", encoding="utf-8")
            out.append(p)
        return out


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, bytes):
        return o.hex()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def comparison_report(ev: Evaluation, config: dict) -> BenchmarkReport:
    config = {**config, "error_metric": ERROR_METRIC, "no_usable_cells_policy": "excluded from all methods"}
    return BenchmarkReport(
        config=config,
        methods=dict(ev.stats),
        counts={"n_samples": ev.n_samples, "n_excluded": ev.n_excluded, "n_dropped_entries": ev.n_dropped_entries},
    )

"""Synthetic networks and scans with known ground truth.

Two modes are supported. ``ideal`` makes cells audible only inside their
sector, removes shadowing, and keeps at most one cell per site in a scan, so
every constraint derived from a scan holds at the true position. ``noisy``
adds log-normal shadowing and attenuates, rather than silences, cells outside
their sector.

RSS follows a log-distance model::

    rss = tx_power - 10 * n * log10(max(d, 1 m)) - sector_penalty + shadowing
"""

from __future__ import annotations

import dataclasses
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .network import (
    MAX_VISIBLE_CELLS,
    Cell,
    GeoPoint,
    NetworkDB,
    PlanarPoint,
    Scan,
    ScanEntry,
    sector_contains,
    unproject,
)
from .precompute import GridSpec

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass(frozen=True)
class PropagationParams:
    tx_power: float = 0.0  # dBm at 1 m
    path_loss_exponent: float = 3.0
    shadowing_sigma: float = 6.0  # dB
    out_of_sector_penalty: float = 20.0  # dB
    detection_threshold: float = -95.0  # dBm
    max_visible: int = MAX_VISIBLE_CELLS

    def __post_init__(self):
        if self.path_loss_exponent <= 0:
            raise ValidationError("path_loss_exponent must be > 0")
        if self.shadowing_sigma < 0:
            raise ValidationError("shadowing_sigma must be >= 0")
        if self.out_of_sector_penalty < 0:
            raise ValidationError("out_of_sector_penalty must be >= 0")
        if self.max_visible != MAX_VISIBLE_CELLS:
            raise ValidationError(f"max_visible is fixed at {MAX_VISIBLE_CELLS}")


IDEAL_PROPAGATION = PropagationParams(shadowing_sigma=0.0, out_of_sector_penalty=math.inf)


@dataclass(frozen=True)
class SimConfig:
    """Synthetic network and radio configuration.

    ``area`` is ``(min_x, min_y, max_x, max_y)`` in meters in the simulation
    frame, a local tangent plane around ``origin``. When ``density`` (cells
    per km^2) is set it overrides ``n_sites``.
    """

    area: tuple[float, float, float, float] = (-356.0, -356.0, 356.0, 356.0)
    n_sites: int | None = None
    density: float | None = 224.0
    sectors_per_site: int = 3
    cells_per_sector: int = 2
    placement: str = "uniform"
    rng_seed: int = 7
    mode: str = "noisy"
    origin: GeoPoint = GeoPoint(30.0, 31.0)
    propagation: PropagationParams = field(default_factory=PropagationParams)

    def __post_init__(self):
        object.__setattr__(self, "area", tuple(float(v) for v in self.area))
        object.__setattr__(self, "origin", GeoPoint(*self.origin))
        x0, y0, x1, y1 = self.area
        if not (x1 > x0 and y1 > y0):
            raise ValidationError("area must have max > min on both axes")
        if self.mode not in ("ideal", "noisy"):
            raise ValidationError(f"mode must be 'ideal' or 'noisy', got {self.mode!r}")
        if self.placement not in ("uniform", "hex"):
            raise ValidationError(f"placement must be 'uniform' or 'hex', got {self.placement!r}")
        if self.sectors_per_site < 1 or self.cells_per_sector < 1:
            raise ValidationError("sectors_per_site and cells_per_sector must be >= 1")
        if self.density is None and self.n_sites is None:
            raise ValidationError("set either n_sites or density")
        if self.density is not None and self.density <= 0:
            raise ValidationError("density must be > 0")

    @classmethod
    def square(cls, area_km2: float, **kw) -> SimConfig:
        """Config over a square of ``area_km2`` centred on the origin."""
        h = math.sqrt(area_km2 * 1e6) / 2
        return cls(area=(-h, -h, h, h), **kw)

    @property
    def area_km2(self) -> float:
        x0, y0, x1, y1 = self.area
        return (x1 - x0) * (y1 - y0) / 1e6

    @property
    def cells_per_site(self) -> int:
        return self.sectors_per_site * self.cells_per_sector

    @property
    def target_cells(self) -> int:
        if self.density is not None:
            return max(1, round(self.density * self.area_km2))
        return self.n_sites * self.cells_per_site

    @property
    def effective_propagation(self) -> PropagationParams:
        if self.mode == "ideal":
            return dataclasses.replace(self.propagation, shadowing_sigma=0.0, out_of_sector_penalty=math.inf)
        return self.propagation

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["area"] = list(self.area)
        d["origin"] = {"lat": self.origin.lat, "lon": self.origin.lon}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SimConfig:
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        if "propagation" in d:
            prop = dict(d["propagation"])
            pknown = {f.name for f in dataclasses.fields(PropagationParams)}
            if set(prop) - pknown:
                raise ValidationError(f"unknown propagation keys {sorted(set(prop) - pknown)}")
            d["propagation"] = PropagationParams(**prop)
        if isinstance(d.get("origin"), dict):
            d["origin"] = GeoPoint(d["origin"]["lat"], d["origin"]["lon"])
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> SimConfig:
        path = Path(path)
        if path.suffix.lower() == ".toml":
            return cls.from_dict(tomllib.loads(path.read_text(encoding="utf-8")))
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


@dataclass(frozen=True)
class NoCoverage:
    """Outcome of a scan simulation in which no cell was detectable."""

    position: PlanarPoint


@dataclass(frozen=True)
class GroundTruthSample:
    true_position: PlanarPoint
    scan: Scan


@dataclass
class Dataset:
    samples: list[GroundTruthSample]
    n_no_coverage: int
    n_attempted: int

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def scans(self) -> list[Scan]:
        return [s.scan for s in self.samples]


# network generation


def _hex_positions(n: int, area: tuple[float, float, float, float]) -> np.ndarray:
    x0, y0, x1, y1 = area
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    spacing = math.sqrt(2 * (x1 - x0) * (y1 - y0) / (math.sqrt(3) * n))
    r = int(math.ceil(math.sqrt(n))) + 2
    pts = []
    for row in range(-r, r + 1):
        for col in range(-r, r + 1):
            pts.append((cx + (col + 0.5 * (row % 2)) * spacing, cy + row * spacing * math.sqrt(3) / 2))
    pts.sort(key=lambda p: (round(math.hypot(p[0] - cx, p[1] - cy), 9), p[1], p[0]))
    return np.array(pts[:n])


def _site_positions(cfg: SimConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    if cfg.placement == "hex":
        return _hex_positions(n, cfg.area)
    x0, y0, x1, y1 = cfg.area
    out: list[tuple[float, float]] = []
    while len(out) < n:
        p = (float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)))
        # keep sites at least 1 m apart
        if all(math.hypot(p[0] - q[0], p[1] - q[1]) >= 1.0 for q in out):
            out.append(p)
    return np.array(out)


def generate_network(cfg: SimConfig) -> NetworkDB:
    """Deterministic synthetic network for ``cfg``.

    Each site's sectors partition [0, 360) under a random per-site rotation.
    With a density target, the site count is rounded up and surplus cells are
    dropped at random so the cell count matches ``round(density * area)``.
    """
    target = cfg.target_cells
    if cfg.density is not None:
        n_sites = math.ceil(target / cfg.cells_per_site)
    else:
        n_sites = cfg.n_sites
    if not n_sites or n_sites < 1:
        raise ValidationError("n_sites must be >= 1")
    rng = np.random.default_rng([cfg.rng_seed, 0])
    xy = _site_positions(cfg, n_sites, rng)
    width = 360.0 / cfg.sectors_per_site
    # dyadic rotations keep k * width sector starts exact, so sectors tile [0, 360)
    rotation = np.floor(rng.uniform(0.0, width, size=n_sites) * 2**20) / 2**20

    width_digits = max(3, len(str(n_sites)))
    sites, sectors, cells = [], [], []
    for i in range(n_sites):
        sid = f"S{i + 1:0{width_digits}d}"
        g = unproject(PlanarPoint(float(xy[i, 0]), float(xy[i, 1])), cfg.origin)
        sites.append((sid, g.lat, g.lon))
        for k in range(cfg.sectors_per_site):
            sec = f"{sid}-{k + 1}"
            start = (float(rotation[i]) + k * width) % 360.0
            span = 360.0 if cfg.sectors_per_site == 1 else width
            sectors.append((sec, sid, start, span))
            for f in range(cfg.cells_per_sector):
                cells.append((f"{sec}-{chr(ord('a') + f) if f < 26 else f}", sec, f"F{f + 1}"))

    surplus = len(cells) - target
    if cfg.density is not None and surplus > 0:
        drop = set(rng.choice(len(cells), size=surplus, replace=False).tolist())
        cells = [c for k, c in enumerate(cells) if k not in drop]
        live = {c[1] for c in cells}
        sectors = [s for s in sectors if s[0] in live]
        live_sites = {s[1] for s in sectors}
        sites = [s for s in sites if s[0] in live_sites]
    return NetworkDB.from_records(sites, sectors, cells)


def area_spec(cfg: SimConfig, db: NetworkDB, step: float = 50.0, margin: float = 0.0) -> GridSpec:
    """The simulation area expressed in ``db``'s planar frame, as a grid spec.

    The simulation frame and the network frame differ by an axis-aligned
    affine map, so the box maps onto a box.
    """
    x0, y0, x1, y1 = cfg.area
    lo = db.project(unproject(PlanarPoint(x0, y0), cfg.origin))
    hi = db.project(unproject(PlanarPoint(x1, y1), cfg.origin))
    return GridSpec(lo.x - margin, lo.y - margin, hi.x + margin, hi.y + margin, step)


def cell_density(db: NetworkDB, area_km2: float) -> float:
    return len(db.cells) / area_km2


# radio


def simulate_rss(
    p: PlanarPoint,
    cell: Cell,
    db: NetworkDB,
    params: PropagationParams,
    rng: np.random.Generator | None = None,
) -> float | None:
    """RSS of ``cell`` at ``p`` in dBm, or ``None`` when below the detection threshold."""
    sector = db.sectors[cell.sector_id]
    site = db.sites[sector.site_id].position
    d = math.hypot(p[0] - site[0], p[1] - site[1])
    rss = params.tx_power - 10.0 * params.path_loss_exponent * math.log10(max(d, 1.0))
    if not sector_contains(sector, p, db):
        rss -= params.out_of_sector_penalty
    if params.shadowing_sigma > 0:
        rss += float(rng.normal(0.0, params.shadowing_sigma))
    return rss if rss >= params.detection_threshold else None


class _CellArrays:
    """Per-cell geometry laid out for vectorised evaluation."""

    def __init__(self, db: NetworkDB):
        secs = [db.sectors[db.cells[c].sector_id] for c in db.cell_ids]
        self.ids = db.cell_ids
        self.site_xy = db.site_xy[db.cell_site_index]
        self.site_idx = db.cell_site_index
        self.start = np.array([s.azimuth_start for s in secs])
        self.span = np.array([s.azimuth_span for s in secs])


_cell_arrays_cache: dict[int, tuple[NetworkDB, _CellArrays]] = {}


def _cell_arrays(db: NetworkDB) -> _CellArrays:
    hit = _cell_arrays_cache.get(id(db))
    if hit is None or hit[0] is not db:
        if len(_cell_arrays_cache) > 32:
            _cell_arrays_cache.clear()
        hit = (db, _CellArrays(db))
        _cell_arrays_cache[id(db)] = hit
    return hit[1]


def rss_all(p: PlanarPoint, db: NetworkDB, params: PropagationParams, rng: np.random.Generator | None) -> np.ndarray:
    """RSS of every cell of ``db`` at ``p`` (cell_id order), before thresholding."""
    ca = _cell_arrays(db)
    dx = p[0] - ca.site_xy[:, 0]
    dy = p[1] - ca.site_xy[:, 1]
    d = np.hypot(dx, dy)
    bearing = np.degrees(np.arctan2(dx, dy)) % 360.0
    bearing[bearing >= 360.0] = 0.0
    inside = (ca.span >= 360.0) | ((bearing - ca.start) % 360.0 < ca.span) | ((dx == 0) & (dy == 0))
    rss = params.tx_power - 10.0 * params.path_loss_exponent * np.log10(np.maximum(d, 1.0))
    rss = np.where(inside, rss, rss - params.out_of_sector_penalty)
    if params.shadowing_sigma > 0:
        rss = rss + rng.normal(0.0, params.shadowing_sigma, size=len(rss))
    return rss


def simulate_scan(p: PlanarPoint, db: NetworkDB, cfg: SimConfig, rng: np.random.Generator | None = None,
                  scan_id: str | None = None) -> Scan | NoCoverage:
    """Scan heard at ``p``: the (up to) seven strongest detectable cells.

    Ideal mode keeps only the strongest cell of each site before the cut.
    """
    params = cfg.effective_propagation
    rss = rss_all(p, db, params, rng)
    ca = _cell_arrays(db)
    visible = np.flatnonzero(rss >= params.detection_threshold)
    if visible.size == 0:
        return NoCoverage(PlanarPoint(*p))
    # cell_ids are sorted, so index order breaks RSS ties by cell_id
    order = visible[np.lexsort((visible, -rss[visible]))]
    if cfg.mode == "ideal":
        _, first = np.unique(ca.site_idx[order], return_index=True)
        order = order[np.sort(first)]
    order = order[: params.max_visible]
    entries = [ScanEntry(ca.ids[k], float(rss[k])) for k in order]
    return Scan(entries, ground_truth=PlanarPoint(float(p[0]), float(p[1])), scan_id=scan_id)


def _sample_rng(cfg: SimConfig, idx: int) -> np.random.Generator:
    return np.random.default_rng([cfg.rng_seed, 1, idx])


def _sample_at(cfg: SimConfig, db: NetworkDB, box: GridSpec, idx: int, position: PlanarPoint | None):
    rng = _sample_rng(cfg, idx)
    u = rng.uniform(size=2)
    if position is None:
        position = PlanarPoint(
            float(box.min_x + u[0] * (box.max_x - box.min_x)),
            float(box.min_y + u[1] * (box.max_y - box.min_y)),
        )
    return simulate_scan(position, db, cfg, rng, scan_id=str(idx))


def _collect(outcomes, n: int) -> Dataset:
    samples = [GroundTruthSample(o.ground_truth, o) for o in outcomes if isinstance(o, Scan)]
    return Dataset(samples, n - len(samples), n)


def generate_dataset(cfg: SimConfig, n_samples: int, db: NetworkDB | None = None, threads: int = 1) -> Dataset:
    """``n_samples`` truth positions drawn uniformly over the area, with their scans.

    Every sample draws from its own stream seeded by ``(rng_seed, index)``,
    so results do not depend on ``threads``. Positions with no detectable
    cell are counted in ``n_no_coverage`` and left out.
    """
    if n_samples <= 0:
        raise ValidationError("n_samples must be > 0")
    if db is None:
        db = generate_network(cfg)
    box = area_spec(cfg, db)
    if threads == 1:
        outcomes = [_sample_at(cfg, db, box, i, None) for i in range(n_samples)]
    else:
        with ThreadPoolExecutor(max_workers=threads or None) as pool:
            outcomes = list(pool.map(lambda i: _sample_at(cfg, db, box, i, None), range(n_samples)))
    return _collect(outcomes, n_samples)


def rescan(dataset: Dataset, source: NetworkDB, target: NetworkDB, cfg: SimConfig) -> Dataset:
    """Regenerate every sample's scan against ``target`` at the same true positions.

    Positions are carried through geographic coordinates, since the two
    networks may use different projection origins. Each sample reuses its
    original random stream.
    """
    box = area_spec(cfg, target)
    outcomes = []
    for s in dataset.samples:
        p = target.project(source.unproject(s.true_position))
        outcomes.append(_sample_at(cfg, target, box, int(s.scan.scan_id), p))
    return _collect(outcomes, len(dataset.samples))

"""Cellular network data model, planar projection and geometric predicates.

A network is a set of sites (towers), each carrying one or more sectors
(azimuth slices measured clockwise from north), each covered by one or more
cells. All geometry runs in a local planar frame in meters, obtained by an
equirectangular projection about the centroid of the site coordinates.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ParseError, ValidationError

EARTH_RADIUS_M = 6_371_000.0
MAX_VISIBLE_CELLS = 7
BISECTOR_EPS = 1e-9  # on squared distances, m^2


class GeoPoint(NamedTuple):
    lat: float
    lon: float


class PlanarPoint(NamedTuple):
    x: float
    y: float


def project(p: GeoPoint, origin: GeoPoint) -> PlanarPoint:
    """Equirectangular projection of ``p`` about ``origin``, in meters."""
    k = EARTH_RADIUS_M * math.pi / 180.0
    x = (p.lon - origin.lon) * math.cos(math.radians(origin.lat)) * k
    y = (p.lat - origin.lat) * k
    return PlanarPoint(x, y)


def unproject(q: PlanarPoint, origin: GeoPoint) -> GeoPoint:
    """Inverse of :func:`project`."""
    k = EARTH_RADIUS_M * math.pi / 180.0
    lat = origin.lat + q.y / k
    lon = origin.lon + q.x / (k * math.cos(math.radians(origin.lat)))
    return GeoPoint(lat, lon)


def _check_geo(lat: float, lon: float, what: str) -> None:
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise ValidationError(f"{what}: non-finite coordinates")
    if not -90.0 <= lat <= 90.0:
        raise ValidationError(f"{what}: latitude {lat} outside [-90, 90]")
    if not -180.0 <= lon <= 180.0:
        raise ValidationError(f"{what}: longitude {lon} outside [-180, 180]")


@dataclass(frozen=True)
class Site:
    site_id: str
    position: PlanarPoint
    geo: GeoPoint


@dataclass(frozen=True)
class Sector:
    sector_id: str
    site_id: str
    azimuth_start: float
    azimuth_span: float


@dataclass(frozen=True)
class Cell:
    cell_id: str
    sector_id: str
    frequency_tag: str = ""


@dataclass(frozen=True)
class ScanEntry:
    cell_id: str
    rss: float


@dataclass(frozen=True)
class Scan:
    """One device observation: up to seven heard cells with their RSS."""

    entries: tuple[ScanEntry, ...]
    timestamp: str | None = None
    ground_truth: PlanarPoint | None = None
    scan_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not 1 <= len(self.entries) <= MAX_VISIBLE_CELLS:
            raise ValidationError(
                f"scan must have 1..{MAX_VISIBLE_CELLS} entries, got {len(self.entries)}"
            )
        ids = [e.cell_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate cell_id in scan {self.scan_id!r}")

    def with_rss(self, fn) -> Scan:
        """Copy of this scan with ``fn`` applied to every RSS value."""
        entries = tuple(ScanEntry(e.cell_id, fn(e.rss)) for e in self.entries)
        return Scan(entries, self.timestamp, self.ground_truth, self.scan_id)


class Side(enum.Enum):
    CLOSER_TO_A = "closer_to_a"
    CLOSER_TO_B = "closer_to_b"
    ON_BISECTOR = "on_bisector"

    def mirror(self) -> Side:
        if self is Side.CLOSER_TO_A:
            return Side.CLOSER_TO_B
        if self is Side.CLOSER_TO_B:
            return Side.CLOSER_TO_A
        return self


@dataclass(frozen=True, eq=False)
class NetworkDB:
    """Immutable, validated view of a cellular network.

    Build instances with :meth:`from_records`, which validates references and
    projects site coordinates about the centroid of the site geo coordinates.
    """

    sites: dict[str, Site]
    sectors: dict[str, Sector]
    cells: dict[str, Cell]
    projection_origin: GeoPoint
    _sector_cells: dict[str, tuple[str, ...]] = field(repr=False)

    @classmethod
    def from_records(
        cls,
        sites: Iterable[tuple[str, float, float]],
        sectors: Iterable[tuple[str, str, float, float]],
        cells: Iterable[tuple[str, str, str]],
        origin: GeoPoint | None = None,
    ) -> NetworkDB:
        """Validate raw records and assemble a network.

        Args:
            sites: ``(site_id, lat, lon)`` tuples.
            sectors: ``(sector_id, site_id, azimuth_start_deg, azimuth_span_deg)``.
            cells: ``(cell_id, sector_id, frequency_tag)``.
            origin: projection origin; defaults to the centroid of the sites.
        """
        geo: dict[str, GeoPoint] = {}
        for site_id, lat, lon in sites:
            site_id = str(site_id)
            if not site_id:
                raise ValidationError("empty site_id")
            if site_id in geo:
                raise ValidationError(f"duplicate site_id {site_id!r}")
            _check_geo(float(lat), float(lon), f"site {site_id!r}")
            geo[site_id] = GeoPoint(float(lat), float(lon))
        if not geo:
            raise ValidationError("network has no sites")

        sector_map: dict[str, Sector] = {}
        for sector_id, site_id, start, span in sectors:
            sector_id, site_id = str(sector_id), str(site_id)
            start, span = float(start), float(span)
            if sector_id in sector_map:
                raise ValidationError(f"duplicate sector_id {sector_id!r}")
            if site_id not in geo:
                raise ValidationError(f"sector {sector_id!r} references unknown site {site_id!r}")
            if not 0.0 <= start < 360.0:
                raise ValidationError(f"sector {sector_id!r}: azimuth_start {start} outside [0, 360)")
            if not 0.0 < span <= 360.0:
                raise ValidationError(f"sector {sector_id!r}: azimuth_span {span} outside (0, 360]")
            sector_map[sector_id] = Sector(sector_id, site_id, start, span)

        cell_map: dict[str, Cell] = {}
        sector_cells: dict[str, list[str]] = {s: [] for s in sector_map}
        for cell_id, sector_id, tag in cells:
            cell_id, sector_id = str(cell_id), str(sector_id)
            if cell_id in cell_map:
                raise ValidationError(f"duplicate cell_id {cell_id!r}")
            if sector_id not in sector_map:
                raise ValidationError(f"cell {cell_id!r} references unknown sector {sector_id!r}")
            cell_map[cell_id] = Cell(cell_id, sector_id, "" if tag is None else str(tag))
            sector_cells[sector_id].append(cell_id)

        used_sites = {s.site_id for s in sector_map.values()}
        for site_id in geo:
            if site_id not in used_sites:
                raise ValidationError(f"site {site_id!r} has no sectors")
        for sector_id, members in sector_cells.items():
            if not members:
                raise ValidationError(f"sector {sector_id!r} has no cells")

        if origin is None:
            origin = GeoPoint(
                math.fsum(g.lat for g in geo.values()) / len(geo),
                math.fsum(g.lon for g in geo.values()) / len(geo),
            )
        site_map = {sid: Site(sid, project(g, origin), g) for sid, g in sorted(geo.items())}
        seen: dict[PlanarPoint, str] = {}
        for s in site_map.values():
            if s.position in seen:
                raise ValidationError(f"sites {seen[s.position]!r} and {s.site_id!r} share a position")
            seen[s.position] = s.site_id

        return cls(
            sites=site_map,
            sectors=dict(sorted(sector_map.items())),
            cells=dict(sorted(cell_map.items())),
            projection_origin=origin,
            _sector_cells={k: tuple(sorted(v)) for k, v in sorted(sector_cells.items())},
        )

    @classmethod
    def from_planar(
        cls,
        sites: Iterable[tuple[str, float, float]],
        sectors: Iterable[tuple[str, str, float, float]],
        cells: Iterable[tuple[str, str, str]],
        origin: GeoPoint = GeoPoint(0.0, 0.0),
    ) -> NetworkDB:
        """Network from ``(site_id, x, y)`` planar positions, kept exactly.

        Geo coordinates are derived by inverse projection about ``origin``.
        """
        sites = [(str(s), float(x), float(y)) for s, x, y in sites]
        geo_rows = [(s, *unproject(PlanarPoint(x, y), origin)) for s, x, y in sites]
        db = cls.from_records(geo_rows, sectors, cells, origin=origin)
        exact = {s: PlanarPoint(x, y) for s, x, y in sites}
        site_map = {sid: Site(sid, exact[sid], site.geo) for sid, site in db.sites.items()}
        if len(set(site_map[s].position for s in site_map)) != len(site_map):
            raise ValidationError("two sites share a position")
        return cls(site_map, db.sectors, db.cells, origin, db._sector_cells)

    # lookups

    @cached_property
    def site_ids(self) -> tuple[str, ...]:
        return tuple(self.sites)

    @cached_property
    def cell_ids(self) -> tuple[str, ...]:
        return tuple(self.cells)

    @cached_property
    def site_index(self) -> dict[str, int]:
        return {sid: i for i, sid in enumerate(self.site_ids)}

    @cached_property
    def cell_index(self) -> dict[str, int]:
        return {cid: i for i, cid in enumerate(self.cell_ids)}

    @cached_property
    def site_xy(self) -> np.ndarray:
        """``(n_sites, 2)`` planar site positions, in site_id order."""
        return np.array([self.sites[s].position for s in self.site_ids], dtype=float).reshape(-1, 2)

    @cached_property
    def cell_site_index(self) -> np.ndarray:
        """Index into :attr:`site_ids` of each cell's owning site."""
        return np.array(
            [self.site_index[self.site_of(c)] for c in self.cell_ids], dtype=np.int64
        )

    def site_of(self, cell_id: str) -> str:
        return self.sectors[self.cells[cell_id].sector_id].site_id

    def cells_of_sector(self, sector_id: str) -> tuple[str, ...]:
        return self._sector_cells[sector_id]

    def sectors_of_site(self, site_id: str) -> list[Sector]:
        return [s for s in self.sectors.values() if s.site_id == site_id]

    def project(self, p: GeoPoint) -> PlanarPoint:
        return project(p, self.projection_origin)

    def unproject(self, q: PlanarPoint) -> GeoPoint:
        return unproject(q, self.projection_origin)

    @cached_property
    def fingerprint(self) -> bytes:
        """SHA-256 over a canonical dump of all sites, sectors and cells."""
        doc = {
            "sites": [[s.site_id, s.geo.lat, s.geo.lon] for s in self.sites.values()],
            "sectors": [
                [s.sector_id, s.site_id, s.azimuth_start, s.azimuth_span]
                for s in self.sectors.values()
            ],
            "cells": [[c.cell_id, c.sector_id, c.frequency_tag] for c in self.cells.values()],
        }
        return hashlib.sha256(json.dumps(doc, separators=(",", ":")).encode()).digest()

    def records(self):
        """Raw ``(sites, sectors, cells)`` rows, as accepted by :meth:`from_records`."""
        sites = [(s.site_id, s.geo.lat, s.geo.lon) for s in self.sites.values()]
        sectors = [
            (s.sector_id, s.site_id, s.azimuth_start, s.azimuth_span) for s in self.sectors.values()
        ]
        cells = [(c.cell_id, c.sector_id, c.frequency_tag) for c in self.cells.values()]
        return sites, sectors, cells

    def subset(self, keep_cells: Iterable[str]) -> NetworkDB:
        """Network restricted to ``keep_cells``; emptied sectors and sites are removed.

        The result is re-projected about the centroid of its remaining sites,
        exactly as if it had been written to disk and loaded again.
        """
        keep = set(keep_cells)
        unknown = keep - set(self.cells)
        if unknown:
            raise ValidationError(f"unknown cells {sorted(unknown)[:5]}")
        cells = [(c.cell_id, c.sector_id, c.frequency_tag) for c in self.cells.values() if c.cell_id in keep]
        live_sectors = {c[1] for c in cells}
        sectors = [
            (s.sector_id, s.site_id, s.azimuth_start, s.azimuth_span)
            for s in self.sectors.values()
            if s.sector_id in live_sectors
        ]
        live_sites = {s[1] for s in sectors}
        sites = [(s.site_id, s.geo.lat, s.geo.lon) for s in self.sites.values() if s.site_id in live_sites]
        return NetworkDB.from_records(sites, sectors, cells)

    def __len__(self) -> int:
        return len(self.cells)


# geometric predicates


def bearing_deg(origin: PlanarPoint, p: PlanarPoint) -> float:
    """Bearing from ``origin`` to ``p`` in degrees clockwise from north, in [0, 360)."""
    b = math.degrees(math.atan2(p[0] - origin[0], p[1] - origin[1])) % 360.0
    return 0.0 if b >= 360.0 else b


def azimuth_in_sector(bearing: float, start: float, span: float) -> bool:
    # half-open [start, start+span) modulo 360
    if span >= 360.0:
        return True
    return (bearing - start) % 360.0 < span


def sector_contains(s: Sector, p: PlanarPoint, db: NetworkDB) -> bool:
    """True iff ``p`` lies in the infinitely extended wedge of sector ``s``.

    A point coincident with the site is contained by convention.
    """
    site = db.sites[s.site_id].position
    if p[0] == site[0] and p[1] == site[1]:
        return True
    return azimuth_in_sector(bearing_deg(site, p), s.azimuth_start, s.azimuth_span)


def sector_mask(points: np.ndarray, s: Sector, db: NetworkDB) -> np.ndarray:
    """Vectorised :func:`sector_contains` over an ``(N, 2)`` array of points."""
    site = db.sites[s.site_id].position
    dx = points[:, 0] - site[0]
    dy = points[:, 1] - site[1]
    if s.azimuth_span >= 360.0:
        return np.ones(len(points), dtype=bool)
    bearing = np.degrees(np.arctan2(dx, dy)) % 360.0
    bearing[bearing >= 360.0] = 0.0
    inside = (bearing - s.azimuth_start) % 360.0 < s.azimuth_span
    return inside | ((dx == 0.0) & (dy == 0.0))


def _sq_dist(p: PlanarPoint, q: PlanarPoint) -> float:
    dx = p[0] - q[0]
    dy = p[1] - q[1]
    return dx * dx + dy * dy


def nearest_site(p: PlanarPoint, db: NetworkDB) -> str:
    """Site closest to ``p``; distances within the bisector tolerance tie, smallest id wins."""
    d2 = [(_sq_dist(p, db.sites[sid].position), sid) for sid in db.site_ids]
    best = min(d for d, _ in d2)
    return min(sid for d, sid in d2 if d - best < BISECTOR_EPS)


def bisector_side(p: PlanarPoint, a: Site, b: Site) -> Side:
    """Which side of the perpendicular bisector of ``a`` and ``b`` the point ``p`` lies on."""
    if a.site_id == b.site_id:
        raise ValueError(f"bisector_side needs two distinct sites, got {a.site_id!r} twice")
    diff = _sq_dist(p, b.position) - _sq_dist(p, a.position)
    if abs(diff) < BISECTOR_EPS:
        return Side.ON_BISECTOR
    return Side.CLOSER_TO_A if diff > 0 else Side.CLOSER_TO_B


# network files


def _read_csv(path: Path, columns: list[str]) -> list[tuple[int, dict[str, str]]]:
    if not path.exists():
        raise ParseError("file not found", path=str(path))
    rows = []
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file, expected header row", line=1, path=str(path)) from None
        header = [h.strip() for h in header]
        missing = [c for c in columns if c not in header]
        if missing:
            raise ParseError(f"missing columns {missing}", line=1, path=str(path))
        for row in reader:
            if not row or all(not v.strip() for v in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(row)}", line=reader.line_num, path=str(path)
                )
            rows.append((reader.line_num, {h: v.strip() for h, v in zip(header, row)}))
    return rows


def _num(value, line: int | None, path: str, name: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ParseError(f"{name}: not a number: {value!r}", line=line, path=path) from None
    if not math.isfinite(out):
        raise ParseError(f"{name}: not finite: {value!r}", line=line, path=path)
    return out


def load_network(path: str | Path, format: str | None = None) -> NetworkDB:
    """Load a network from a CSV directory or a JSON document.

    CSV layout is a directory holding ``sites.csv`` (site_id,lat,lon),
    ``sectors.csv`` (sector_id,site_id,azimuth_start_deg,azimuth_span_deg)
    and ``cells.csv`` (cell_id,sector_id,frequency_tag). The JSON form holds
    three arrays ``sites``, ``sectors`` and ``cells`` with the same fields.

    Raises:
        ParseError: malformed file or row (with line number where known).
        ValidationError: dangling reference, duplicate id, empty site or sector.
    """
    path = Path(path)
    if format is None:
        format = "json" if path.suffix.lower() == ".json" else "csv"
    if format == "csv":
        return _load_csv(path)
    if format == "json":
        return _load_json(path)
    raise ValueError(f"unknown network format {format!r}")


def _load_csv(path: Path) -> NetworkDB:
    directory = path.parent if path.is_file() else path
    sp, tp, cp = directory / "sites.csv", directory / "sectors.csv", directory / "cells.csv"
    sites = [
        (r["site_id"], _num(r["lat"], n, str(sp), "lat"), _num(r["lon"], n, str(sp), "lon"))
        for n, r in _read_csv(sp, ["site_id", "lat", "lon"])
    ]
    sectors = [
        (
            r["sector_id"],
            r["site_id"],
            _num(r["azimuth_start_deg"], n, str(tp), "azimuth_start_deg"),
            _num(r["azimuth_span_deg"], n, str(tp), "azimuth_span_deg"),
        )
        for n, r in _read_csv(tp, ["sector_id", "site_id", "azimuth_start_deg", "azimuth_span_deg"])
    ]
    cells = [
        (r["cell_id"], r["sector_id"], r.get("frequency_tag", ""))
        for _, r in _read_csv(cp, ["cell_id", "sector_id"])
    ]
    return NetworkDB.from_records(sites, sectors, cells)


def _load_json(path: Path) -> NetworkDB:
    if not path.exists():
        raise ParseError("file not found", path=str(path))
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, path=str(path)) from None
    if not isinstance(doc, dict) or not all(isinstance(doc.get(k), list) for k in ("sites", "sectors", "cells")):
        raise ParseError("expected an object with arrays 'sites', 'sectors', 'cells'", path=str(path))
    p = str(path)
    try:
        sites = [(r["site_id"], _num(r["lat"], None, p, "lat"), _num(r["lon"], None, p, "lon")) for r in doc["sites"]]
        sectors = [
            (
                r["sector_id"],
                r["site_id"],
                _num(r["azimuth_start_deg"], None, p, "azimuth_start_deg"),
                _num(r["azimuth_span_deg"], None, p, "azimuth_span_deg"),
            )
            for r in doc["sectors"]
        ]
        cells = [(r["cell_id"], r["sector_id"], r.get("frequency_tag", "")) for r in doc["cells"]]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed record: missing field {exc}", path=p) from None
    return NetworkDB.from_records(sites, sectors, cells)


def write_network(db: NetworkDB, path: str | Path, format: str = "csv") -> None:
    """Write ``db`` in the format read by :func:`load_network`; floats round-trip exactly."""
    path = Path(path)
    sites, sectors, cells = db.records()
    if format == "json":
        doc = {
            "sites": [{"site_id": s, "lat": la, "lon": lo} for s, la, lo in sites],
            "sectors": [
                {"sector_id": k, "site_id": s, "azimuth_start_deg": a, "azimuth_span_deg": w}
                for k, s, a, w in sectors
            ],
            "cells": [{"cell_id": c, "sector_id": k, "frequency_tag": t} for c, k, t in cells],
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        return
    if format != "csv":
        raise ValueError(f"unknown network format {format!r}")
    path.mkdir(parents=True, exist_ok=True)
    tables = [
        ("sites.csv", ["site_id", "lat", "lon"], sites),
        ("sectors.csv", ["sector_id", "site_id", "azimuth_start_deg", "azimuth_span_deg"], sectors),
        ("cells.csv", ["cell_id", "sector_id", "frequency_tag"], cells),
    ]
    for name, header, rows in tables:
        with (path / name).open("w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])

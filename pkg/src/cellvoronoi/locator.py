"""Online phase: cell clustering, constraint scoring and location estimation.

Also hosts the two classical baselines, Cell ID (position of the strongest
heard cell's site) and Centroid (mean position of the distinct heard sites).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoUsableCellsError
from .network import GeoPoint, NetworkDB, PlanarPoint, Scan, ScanEntry, Side
from .precompute import GridPointRecord, PrecomputeTable, pair_index

log = logging.getLogger(__name__)

# site_id -> (representative cell_id, rss)
RepresentativeSiteSet = dict[str, tuple[str, float]]


@dataclass(frozen=True)
class OnlineConstraints:
    strongest_site: str
    pairwise: dict[tuple[str, str], Side]  # keys (a, b) with a < b
    visible_cells: frozenset[str]

    @property
    def achievable_score(self) -> int:
        return len(self.pairwise) + len(self.visible_cells)


@dataclass(frozen=True)
class LocationEstimate:
    position: PlanarPoint
    geo: GeoPoint
    max_score: int
    achievable_score: int
    n_max_points: int
    ambiguity_extent: float
    fallback_used: bool
    strongest_site: str
    n_candidates: int
    argmax_rows: tuple[int, ...] = field(default=(), repr=False)  # row-major grid indices


def usable_entries(scan: Scan, db: NetworkDB) -> tuple[list[ScanEntry], int]:
    """Entries whose cell resolves in ``db``, and the number dropped."""
    kept = [e for e in scan.entries if e.cell_id in db.cells]
    dropped = len(scan.entries) - len(kept)
    if dropped:
        log.warning("scan %s: dropped %d unknown cell(s)", scan.scan_id, dropped)
    return kept, dropped


def _strongest_first(entries):
    return sorted(entries, key=lambda e: (-e.rss, e.cell_id))


def cluster_scan(scan: Scan, db: NetworkDB) -> RepresentativeSiteSet:
    """Strongest heard cell per site (RSS ties go to the smaller cell_id).

    Raises:
        NoUsableCellsError: no entry of ``scan`` resolves in ``db``.
    """
    entries, _ = usable_entries(scan, db)
    if not entries:
        raise NoUsableCellsError(f"scan {scan.scan_id!r} has no cells known to the network")
    reps: RepresentativeSiteSet = {}
    for e in _strongest_first(entries):
        reps.setdefault(db.site_of(e.cell_id), (e.cell_id, e.rss))
    return dict(sorted(reps.items()))


def build_constraints(reps: RepresentativeSiteSet, scan: Scan, db: NetworkDB | None = None) -> OnlineConstraints:
    """Online pairwise site constraints and the visible cell set.

    When ``db`` is given, scan cells unknown to it are left out of the
    visible set.
    """
    if not reps:
        raise NoUsableCellsError("no representative sites")
    sites = sorted(reps)
    strongest = min(sites, key=lambda s: (-reps[s][1], s))
    pairwise = {}
    for i, a in enumerate(sites):
        for b in sites[i + 1 :]:
            # RSS tie resolves to the smaller site_id, which is a
            pairwise[(a, b)] = Side.CLOSER_TO_A if reps[a][1] >= reps[b][1] else Side.CLOSER_TO_B
    visible = frozenset(e.cell_id for e in scan.entries if db is None or e.cell_id in db.cells)
    return OnlineConstraints(strongest, pairwise, visible)


def score_point(rec: GridPointRecord, oc: OnlineConstraints) -> int:
    """Number of online constraints that the grid record satisfies."""
    score = sum(1 for pair, side in oc.pairwise.items() if rec.pairwise_bits[pair] is side)
    score += sum(1 for c in oc.visible_cells if c in rec.containing_cells)
    return score


def _match_counts(packed: np.ndarray, cols: np.ndarray, want: np.ndarray) -> np.ndarray:
    """Per row, how many of bit columns ``cols`` equal ``want``."""
    if cols.size == 0:
        return np.zeros(len(packed), dtype=np.int32)
    bits = (packed[:, cols >> 3] >> (7 - (cols & 7)).astype(np.uint8)) & 1
    return (bits == want).sum(axis=1, dtype=np.int32)


def score_rows(table: PrecomputeTable, oc: OnlineConstraints, db: NetworkDB, rows: np.ndarray | None = None) -> np.ndarray:
    """Vectorised :func:`score_point` over table records ``rows`` (all by default)."""
    n = len(table.site_ids)
    pair_cols = np.array(
        [pair_index(db.site_index[a], db.site_index[b], n) for a, b in oc.pairwise], dtype=np.int64
    )
    pair_want = np.array([side is Side.CLOSER_TO_A for side in oc.pairwise.values()], dtype=np.uint8)
    cell_cols = np.array(sorted(db.cell_index[c] for c in oc.visible_cells), dtype=np.int64)
    pw = table.pairwise if rows is None else table.pairwise[rows]
    cc = table.containing if rows is None else table.containing[rows]
    return _match_counts(pw, pair_cols, pair_want) + _match_counts(cc, cell_cols, np.uint8(1))


def localize(scan: Scan, table: PrecomputeTable, db: NetworkDB) -> LocationEstimate:
    """Estimate the device position for one scan.

    Candidates are the grid points of the strongest site's discrete Voronoi
    region (the whole grid when that region is empty). The estimate is the
    mean of the candidates attaining the maximum score.

    Raises:
        NoUsableCellsError: the scan has no cell known to ``db``.
        StaleTableError: ``table`` was built for another network.
    """
    table.check(db)
    reps = cluster_scan(scan, db)
    oc = build_constraints(reps, scan, db)
    # every grid point is scored; the strongest site's Voronoi region filters
    scores = score_rows(table, oc, db)
    rows = np.flatnonzero(table.voronoi == db.site_index[oc.strongest_site])
    fallback = rows.size == 0
    if fallback:
        rows = np.arange(len(table))
    cand = scores[rows]
    best = int(cand.max())
    sel = rows[cand == best]
    spec = table.spec
    xs = spec.min_x + (sel % spec.nx) * spec.step
    ys = spec.min_y + (sel // spec.nx) * spec.step
    position = PlanarPoint(float(xs.mean()), float(ys.mean()))
    extent = math.hypot(float(xs.max() - xs.min()), float(ys.max() - ys.min()))
    return LocationEstimate(
        position=position,
        geo=db.unproject(position),
        max_score=best,
        achievable_score=oc.achievable_score,
        n_max_points=int(sel.size),
        ambiguity_extent=extent,
        fallback_used=fallback,
        strongest_site=oc.strongest_site,
        n_candidates=int(rows.size),
        argmax_rows=tuple(sel.tolist()),
    )


def cell_id_baseline(scan: Scan, db: NetworkDB) -> PlanarPoint:
    """Position of the site owning the strongest heard cell."""
    entries, _ = usable_entries(scan, db)
    if not entries:
        raise NoUsableCellsError(f"scan {scan.scan_id!r} has no cells known to the network")
    top = _strongest_first(entries)[0]
    return db.sites[db.site_of(top.cell_id)].position


def centroid_baseline(scan: Scan, db: NetworkDB) -> PlanarPoint:
    """Unweighted mean position of the distinct heard sites."""
    entries, _ = usable_entries(scan, db)
    if not entries:
        raise NoUsableCellsError(f"scan {scan.scan_id!r} has no cells known to the network")
    sites = sorted({db.site_of(e.cell_id) for e in entries})
    xy = np.array([db.sites[s].position for s in sites], dtype=float)
    m = xy.mean(axis=0)
    return PlanarPoint(float(m[0]), float(m[1]))

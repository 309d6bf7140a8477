"""Virtual grid generation and per-grid-point precomputation.

For every point of a regular grid over the area of interest the table holds
the nearest site (discrete Voronoi label), one bit per unordered site pair
saying which of the two sites is closer, and a bitset of the cells whose
infinitely extended sector contains the point.

Binary table layout (all integers little-endian)::

    offset  size         field
    0       4            magic b"CRSC"
    4       2            format version (u16, currently 1)
    6       2            reserved, zero
    8       40           min_x, min_y, max_x, max_y, step (5 x f64)
    48      8            nx, ny (2 x u32)
    56      8            n_sites, n_cells (2 x u32)
    64      32           network fingerprint (SHA-256)
    96      ...          n_sites site ids, then n_cells cell ids, each a
                         u16 byte length followed by UTF-8 bytes
    ...     4*N          voronoi site index per record (u32)
    ...     N*ceil(P/8)  pairwise bits, row-major, P = n_sites*(n_sites-1)/2
    ...     N*ceil(C/8)  containing-cell bitset, row-major, C = n_cells
    ...     4            CRC-32 of every preceding byte

N = nx*ny records in row-major order (x varies fastest). Bits are packed most
significant first. Pair column k enumerates pairs (i, j), i < j, of the sorted
site ids in lexicographic order; a set bit means site i is closer (ties go to
site i, the smaller id).
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, StaleTableError, ValidationError
from .network import BISECTOR_EPS, NetworkDB, PlanarPoint, Side, sector_mask

MAGIC = b"CRSC"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHH5d2I2I32s")
_LATTICE_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    min_x: float
    min_y: float
    max_x: float
    max_y: float
    step: float = 50.0

    def __post_init__(self):
        vals = (self.min_x, self.min_y, self.max_x, self.max_y, self.step)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError("grid spec values must be finite")
        if self.step <= 0:
            raise ValidationError(f"grid step must be positive, got {self.step}")
        if not (self.max_x > self.min_x and self.max_y > self.min_y):
            raise ValidationError("grid box must have max > min on both axes")

    @property
    def nx(self) -> int:
        return int(math.floor((self.max_x - self.min_x) / self.step + _LATTICE_TOL)) + 1

    @property
    def ny(self) -> int:
        return int(math.floor((self.max_y - self.min_y) / self.step + _LATTICE_TOL)) + 1

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def with_step(self, step: float) -> GridSpec:
        return GridSpec(self.min_x, self.min_y, self.max_x, self.max_y, step)


def build_grid(spec: GridSpec) -> np.ndarray:
    """Grid points as an ``(nx*ny, 2)`` array in row-major order (x fastest)."""
    xs = spec.min_x + np.arange(spec.nx) * spec.step
    ys = spec.min_y + np.arange(spec.ny) * spec.step
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def default_grid_spec(db: NetworkDB, step: float = 50.0) -> GridSpec:
    """Site bounding box inflated by the median nearest-neighbour site distance."""
    xy = db.site_xy
    if len(xy) > 1:
        d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1))
        np.fill_diagonal(d, np.inf)
        margin = float(np.median(d.min(axis=1)))
    else:
        margin = 1000.0
    lo = xy.min(axis=0) - margin
    hi = xy.max(axis=0) + margin
    return GridSpec(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]), step)


def pair_count(n: int) -> int:
    return n * (n - 1) // 2


def pair_index(i: int, j: int, n: int) -> int:
    """Column of the unordered pair ``{i, j}`` (site indices) among ``n`` sites."""
    if i > j:
        i, j = j, i
    return i * (2 * n - i - 1) // 2 + (j - i - 1)


def _packed_bit(packed: np.ndarray, col: int) -> np.ndarray:
    return ((packed[:, col >> 3] >> (7 - (col & 7))) & 1).astype(bool)


@dataclass(frozen=True)
class GridPointRecord:
    point: PlanarPoint
    voronoi_site: str
    pairwise_bits: dict[tuple[str, str], Side]
    containing_cells: frozenset[str]


@dataclass(frozen=True, eq=False)
class PrecomputeTable:
    """Dense precomputed grid records.

    ``voronoi`` holds one site index per record; ``pairwise`` and
    ``containing`` hold the packed bit rows described in the module docstring.
    """

    spec: GridSpec
    network_fingerprint: bytes
    site_ids: tuple[str, ...]
    cell_ids: tuple[str, ...]
    voronoi: np.ndarray
    pairwise: np.ndarray
    containing: np.ndarray

    def __post_init__(self):
        for arr in (self.voronoi, self.pairwise, self.containing):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.voronoi)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PrecomputeTable):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.network_fingerprint == other.network_fingerprint
            and self.site_ids == other.site_ids
            and self.cell_ids == other.cell_ids
            and np.array_equal(self.voronoi, other.voronoi)
            and np.array_equal(self.pairwise, other.pairwise)
            and np.array_equal(self.containing, other.containing)
        )

    @property
    def points(self) -> np.ndarray:
        return build_grid(self.spec)

    @property
    def n_pairs(self) -> int:
        return pair_count(len(self.site_ids))

    def check(self, db: NetworkDB) -> None:
        if db.fingerprint != self.network_fingerprint:
            raise StaleTableError("precompute table was built for a different network; rebuild it")

    def pair_bits(self, col: int, rows: np.ndarray | None = None) -> np.ndarray:
        packed = self.pairwise if rows is None else self.pairwise[rows]
        return _packed_bit(packed, col)

    def cell_bits(self, col: int, rows: np.ndarray | None = None) -> np.ndarray:
        packed = self.containing if rows is None else self.containing[rows]
        return _packed_bit(packed, col)

    def record(self, k: int) -> GridPointRecord:
        """Unpacked view of record ``k``."""
        spec = self.spec
        i, j = k % spec.nx, k // spec.nx
        point = PlanarPoint(spec.min_x + i * spec.step, spec.min_y + j * spec.step)
        n = len(self.site_ids)
        bits = np.unpackbits(self.pairwise[k])[: self.n_pairs]
        ia, ib = np.triu_indices(n, 1)
        pairwise = {
            (self.site_ids[a], self.site_ids[b]): Side.CLOSER_TO_A if bit else Side.CLOSER_TO_B
            for a, b, bit in zip(ia, ib, bits)
        }
        cells = np.unpackbits(self.containing[k])[: len(self.cell_ids)]
        return GridPointRecord(
            point=point,
            voronoi_site=self.site_ids[int(self.voronoi[k])],
            pairwise_bits=pairwise,
            containing_cells=frozenset(c for c, bit in zip(self.cell_ids, cells) if bit),
        )


def _compute_chunk(points: np.ndarray, db: NetworkDB, cell_sector_masks) -> tuple:
    xy = db.site_xy
    dx = points[:, None, 0] - xy[None, :, 0]
    dy = points[:, None, 1] - xy[None, :, 1]
    d2 = dx * dx + dy * dy
    best = d2.min(axis=1)
    voronoi = np.argmax(d2 - best[:, None] < BISECTOR_EPS, axis=1).astype("<u4")
    ia, ib = np.triu_indices(len(xy), 1)
    # bit set: first (smaller-id) site closer, or within the tie tolerance
    bits = (d2[:, ib] - d2[:, ia]) > -BISECTOR_EPS
    sector_hits = {sid: sector_mask(points, sec, db) for sid, sec in db.sectors.items()}
    if cell_sector_masks:
        contain = np.column_stack([sector_hits[s] for s in cell_sector_masks])
    else:
        contain = np.zeros((len(points), 0), bool)
    return voronoi, np.packbits(bits, axis=1), np.packbits(contain, axis=1)


def precompute(db: NetworkDB, spec: GridSpec, threads: int = 1, chunk: int = 4096) -> PrecomputeTable:
    """Build the table for every grid point of ``spec``.

    Records are pure functions of the network and the point, so chunks run in
    a thread pool when ``threads != 1`` (0 means one per CPU); assembly order
    is fixed, making the output independent of scheduling.
    """
    points = build_grid(spec)
    cell_sectors = [db.cells[c].sector_id for c in db.cell_ids]
    chunks = [points[k : k + chunk] for k in range(0, len(points), chunk)]
    if threads == 1 or len(chunks) == 1:
        parts = [_compute_chunk(c, db, cell_sectors) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads or None) as pool:
            parts = list(pool.map(lambda c: _compute_chunk(c, db, cell_sectors), chunks))
    n_pair_bytes = (pair_count(len(db.site_ids)) + 7) // 8
    n_cell_bytes = (len(db.cell_ids) + 7) // 8
    voronoi = np.concatenate([p[0] for p in parts])
    pairwise = np.concatenate([p[1] for p in parts]).reshape(len(points), n_pair_bytes)
    containing = np.concatenate([p[2] for p in parts]).reshape(len(points), n_cell_bytes)
    return PrecomputeTable(
        spec=spec,
        network_fingerprint=db.fingerprint,
        site_ids=db.site_ids,
        cell_ids=db.cell_ids,
        voronoi=voronoi,
        pairwise=np.ascontiguousarray(pairwise, dtype=np.uint8),
        containing=np.ascontiguousarray(containing, dtype=np.uint8),
    )


# serialization


def _pack_ids(ids) -> bytes:
    out = bytearray()
    for s in ids:
        raw = s.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"identifier too long: {s[:40]!r}...")
        out += struct.pack("<H", len(raw)) + raw
    return bytes(out)


def table_to_bytes(t: PrecomputeTable) -> bytes:
    s = t.spec
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, 0, s.min_x, s.min_y, s.max_x, s.max_y, s.step,
        s.nx, s.ny, len(t.site_ids), len(t.cell_ids), t.network_fingerprint,
    )
    body = b"".join([
        header,
        _pack_ids(t.site_ids),
        _pack_ids(t.cell_ids),
        t.voronoi.astype("<u4").tobytes(),
        t.pairwise.tobytes(),
        t.containing.tobytes(),
    ])
    return body + struct.pack("<I", zlib.crc32(body))


def save_table(t: PrecomputeTable, path: str | Path) -> None:
    Path(path).write_bytes(table_to_bytes(t))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("table file is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def ids(self, count: int) -> tuple[str, ...]:
        out = []
        for _ in range(count):
            (length,) = struct.unpack("<H", self.take(2))
            try:
                out.append(self.take(length).decode("utf-8"))
            except UnicodeDecodeError:
                raise FormatError("identifier is not valid UTF-8") from None
        return tuple(out)


def table_from_bytes(data: bytes) -> PrecomputeTable:
    if len(data) < _HEADER.size + 4:
        raise FormatError("table file is empty or truncated")
    if data[:4] != MAGIC:
        raise FormatError("not a precompute table (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("table checksum mismatch (corrupt or truncated file)")
    r = _Reader(body)
    magic, version, _, x0, y0, x1, y1, step, nx, ny, n_sites, n_cells, fp = _HEADER.unpack(r.take(_HEADER.size))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported table format version {version}")
    try:
        spec = GridSpec(x0, y0, x1, y1, step)
    except ValidationError as exc:
        raise FormatError(f"invalid grid spec in header: {exc}") from None
    if (spec.nx, spec.ny) != (nx, ny):
        raise FormatError("grid dimensions in header disagree with grid spec")
    site_ids = r.ids(n_sites)
    cell_ids = r.ids(n_cells)
    n = nx * ny
    pb = (pair_count(n_sites) + 7) // 8
    cb = (n_cells + 7) // 8
    voronoi = np.frombuffer(r.take(4 * n), dtype="<u4").copy()
    pairwise = np.frombuffer(r.take(n * pb), dtype=np.uint8).reshape(n, pb).copy()
    containing = np.frombuffer(r.take(n * cb), dtype=np.uint8).reshape(n, cb).copy()
    if r.pos != len(body):
        raise FormatError("trailing bytes after table records")
    if n and voronoi.max() >= n_sites:
        raise FormatError("voronoi label out of range")
    return PrecomputeTable(spec, fp, site_ids, cell_ids, voronoi, pairwise, containing)


def load_table(path: str | Path, db: NetworkDB | None = None) -> PrecomputeTable:
    """Read a table written by :func:`save_table`.

    Raises:
        FormatError: empty, truncated, corrupt or unknown-version file.
        StaleTableError: ``db`` is given and its fingerprint differs.
    """
    t = table_from_bytes(Path(path).read_bytes())
    if db is not None:
        t.check(db)
    return t


def export_json(t: PrecomputeTable, path: str | Path) -> None:
    """Human-readable dump of every record, for debugging."""
    pts = t.points
    records = []
    for k in range(len(t)):
        rec = t.record(k)
        records.append({
            "x": float(pts[k, 0]),
            "y": float(pts[k, 1]),
            "voronoi_site": rec.voronoi_site,
            "pairwise": {
                f"{a}|{b}": a if side is Side.CLOSER_TO_A else b for (a, b), side in rec.pairwise_bits.items()
            },
            "containing_cells": sorted(rec.containing_cells),
        })
    doc = {
        "format_version": FORMAT_VERSION,
        "spec": {
            "min_x": t.spec.min_x, "min_y": t.spec.min_y,
            "max_x": t.spec.max_x, "max_y": t.spec.max_y, "step": t.spec.step,
            "nx": t.spec.nx, "ny": t.spec.ny,
        },
        "network_fingerprint": t.network_fingerprint.hex(),
        "site_ids": list(t.site_ids),
        "cell_ids": list(t.cell_ids),
        "records": records,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")

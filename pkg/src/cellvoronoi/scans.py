"""Scan CSV reader and writer.

Columns: ``scan_id,timestamp,true_lat,true_lon,cell_id_1,rss_1,...,cell_id_7,rss_7``.
Unused trailing slots and unknown ground truth are left empty.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable

from .errors import ParseError, ValidationError
from .network import MAX_VISIBLE_CELLS, GeoPoint, NetworkDB, Scan, ScanEntry

SCAN_COLUMNS = ["scan_id", "timestamp", "true_lat", "true_lon"] + [
    f"{k}_{i}" for i in range(1, MAX_VISIBLE_CELLS + 1) for k in ("cell_id", "rss")
]


def _float(value: str, line: int, path: str, name: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ParseError(f"{name}: not a number: {value!r}", line=line, path=path) from None


def read_scans(path: str | Path, db: NetworkDB) -> list[Scan]:
    """Read a scan CSV; ground truth is projected into ``db``'s planar frame."""
    path = Path(path)
    p = str(path)
    if not path.exists():
        raise ParseError("file not found", path=p)
    scans = []
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file, expected header row", line=1, path=p) from None
        missing = [c for c in SCAN_COLUMNS[:6] if c not in header]
        if missing:
            raise ParseError(f"missing columns {missing}", line=1, path=p)
        for row in reader:
            if not row or all(not v.strip() for v in row):
                continue
            n = reader.line_num
            if len(row) > len(header):
                raise ParseError(f"expected at most {len(header)} fields, got {len(row)}", line=n, path=p)
            rec = dict(zip(header, (v.strip() for v in row)))
            entries = []
            for i in range(1, MAX_VISIBLE_CELLS + 1):
                cid = rec.get(f"cell_id_{i}", "")
                rss = rec.get(f"rss_{i}", "")
                if not cid and not rss:
                    continue
                if not cid or not rss:
                    raise ParseError(f"slot {i}: cell_id and rss must both be set", line=n, path=p)
                entries.append(ScanEntry(cid, _float(rss, n, p, f"rss_{i}")))
            truth = None
            lat, lon = rec.get("true_lat", ""), rec.get("true_lon", "")
            if lat and lon:
                truth = db.project(GeoPoint(_float(lat, n, p, "true_lat"), _float(lon, n, p, "true_lon")))
            try:
                scans.append(Scan(entries, rec.get("timestamp") or None, truth, rec.get("scan_id") or None))
            except ValidationError as exc:
                raise ParseError(str(exc), line=n, path=p) from None
    return scans


def write_scans(path: str | Path, scans: Iterable[Scan], db: NetworkDB) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SCAN_COLUMNS)
        for k, scan in enumerate(scans):
            if scan.ground_truth is not None:
                g = db.unproject(scan.ground_truth)
                truth = [repr(g.lat), repr(g.lon)]
            else:
                truth = ["", ""]
            slots = []
            for e in scan.entries:
                slots += [e.cell_id, repr(float(e.rss))]
            slots += [""] * (2 * MAX_VISIBLE_CELLS - len(slots))
            sid = scan.scan_id if scan.scan_id is not None else str(k)
            w.writerow([sid, scan.timestamp or ""] + truth + slots)

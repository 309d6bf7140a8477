"""Naive per-point re-evaluation of the localizer, straight from geometry.

Shares no code with the precompute table or the vectorised scorer: distances,
bearings and constraint derivation are recomputed here with plain Python.
"""

import math

import numpy as np

EPS = 1e-9


def _d2(p, q):
    return (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2


def _nearest(p, db):
    d = {sid: _d2(p, s.position) for sid, s in db.sites.items()}
    m = min(d.values())
    return min(sid for sid, v in d.items() if v - m < EPS)


def _a_closer(p, a, b):
    # tie on the bisector goes to a, the smaller id
    return _d2(p, b) - _d2(p, a) > -EPS


def _in_sector(p, sector, db):
    sx, sy = db.sites[sector.site_id].position
    if p[0] == sx and p[1] == sy:
        return True
    if sector.azimuth_span >= 360.0:
        return True
    b = math.degrees(math.atan2(p[0] - sx, p[1] - sy)) % 360.0
    if b >= 360.0:
        b = 0.0
    return (b - sector.azimuth_start) % 360.0 < sector.azimuth_span


def constraints(scan, db):
    best = {}
    for e in scan.entries:
        if e.cell_id not in db.cells:
            continue
        site = db.sectors[db.cells[e.cell_id].sector_id].site_id
        cur = best.get(site)
        if cur is None or e.rss > cur[1] or (e.rss == cur[1] and e.cell_id < cur[0]):
            best[site] = (e.cell_id, e.rss)
    sites = sorted(best)
    strongest = sorted(sites, key=lambda s: (-best[s][1], s))[0]
    pairs = []
    for i in range(len(sites)):
        for j in range(i + 1, len(sites)):
            a, b = sites[i], sites[j]
            pairs.append((a, b, best[a][1] >= best[b][1]))
    cells = sorted(e.cell_id for e in scan.entries if e.cell_id in db.cells)
    return strongest, pairs, cells


def score(p, db, pairs, cells):
    s = 0
    for a, b, want in pairs:
        if _a_closer(p, db.sites[a].position, db.sites[b].position) == want:
            s += 1
    for c in cells:
        if _in_sector(p, db.sectors[db.cells[c].sector_id], db):
            s += 1
    return s


def grid_points(spec):
    pts = []
    for j in range(spec.ny):
        for i in range(spec.nx):
            pts.append((spec.min_x + i * spec.step, spec.min_y + j * spec.step))
    return pts


def localize(scan, spec, db):
    """Returns (position, scores over all points, argmax indices, fallback)."""
    strongest, pairs, cells = constraints(scan, db)
    pts = grid_points(spec)
    scores = [score(p, db, pairs, cells) for p in pts]
    cand = [k for k, p in enumerate(pts) if _nearest(p, db) == strongest]
    fallback = not cand
    if fallback:
        cand = list(range(len(pts)))
    top = max(scores[k] for k in cand)
    arg = [k for k in cand if scores[k] == top]
    xy = np.array([pts[k] for k in arg])
    return (float(xy[:, 0].mean()), float(xy[:, 1].mean())), scores, arg, fallback

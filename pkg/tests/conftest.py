import math
import sys
from pathlib import Path

import numpy as np
import pytest

from cellvoronoi.network import NetworkDB

sys.path.insert(0, str(Path(__file__).parent))


def sectored_db(sites, n_sectors=3, cells_per_sector=1, rotations=None):
    """Planar network; each site gets ``n_sectors`` equal sectors from its rotation."""
    rows, secs, cells = [], [], []
    width = 360.0 / n_sectors
    for k, (sid, x, y) in enumerate(sites):
        rows.append((sid, x, y))
        rot = 0.0 if rotations is None else rotations[k]
        for j in range(n_sectors):
            sec = f"{sid}_{j + 1}"
            secs.append((sec, sid, (rot + j * width) % 360.0, width if n_sectors > 1 else 360.0))
            for f in range(cells_per_sector):
                cells.append((f"{sec}{'abcdefgh'[f]}", sec, f"F{f}"))
    return NetworkDB.from_planar(rows, secs, cells)


def random_db(rng, n_sites, extent=1000.0, n_sectors=3, cells_per_sector=1):
    xy = rng.uniform(0, extent, size=(n_sites, 2))
    sites = [(f"T{k:02d}", float(x), float(y)) for k, (x, y) in enumerate(xy)]
    rot = rng.uniform(0, 360.0 / n_sectors, size=n_sites).tolist()
    return sectored_db(sites, n_sectors, cells_per_sector, rot)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_site_db():
    return sectored_db([("A", 0.0, 0.0), ("B", 100.0, 0.0)])


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

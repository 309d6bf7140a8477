"""Calibration-free cellular localization from heard cells and relative RSS."""

from .errors import (
    FormatError,
    LocatorError,
    NoUsableCellsError,
    ParseError,
    StaleTableError,
    ValidationError,
)
from .locator import (
    LocationEstimate,
    OnlineConstraints,
    build_constraints,
    cell_id_baseline,
    centroid_baseline,
    cluster_scan,
    localize,
    score_point,
)
from .network import (
    Cell,
    GeoPoint,
    NetworkDB,
    PlanarPoint,
    Scan,
    ScanEntry,
    Sector,
    Side,
    Site,
    bisector_side,
    load_network,
    nearest_site,
    project,
    sector_contains,
    unproject,
    write_network,
)
from .precompute import GridSpec, PrecomputeTable, build_grid, load_table, precompute, save_table
from .scans import read_scans, write_scans
from .simulator import (
    Dataset,
    GroundTruthSample,
    NoCoverage,
    PropagationParams,
    SimConfig,
    generate_dataset,
    generate_network,
    simulate_rss,
    simulate_scan,
)
from .evaluation import BenchmarkReport, ErrorStats, evaluate, sweep_density, sweep_grid_size

__version__ = "0.1.0"

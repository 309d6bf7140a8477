import csv
import json
import math

import numpy as np
import pytest

from conftest import sectored_db
from cellvoronoi.errors import NoUsableCellsError, ValidationError
from cellvoronoi.evaluation import (
    METHODS,
    BenchmarkReport,
    ErrorStats,
    comparison_report,
    evaluate,
    sweep_density,
    sweep_grid_size,
    time_localize,
)
from cellvoronoi.network import Scan, ScanEntry
from cellvoronoi.precompute import GridSpec, precompute
from cellvoronoi.simulator import SimConfig, area_spec, generate_dataset, generate_network

SMALL = SimConfig.square(0.2, density=150.0, rng_seed=2)


@pytest.fixture(scope="module")
def small():
    db = generate_network(SMALL)
    data = generate_dataset(SMALL, 150, db)
    table = precompute(db, area_spec(SMALL, db, 50))
    return db, data, table


class TestErrorStats:
    def test_single_sample(self):
        s = ErrorStats.from_errors([100.0])
        assert s.n == 1
        assert s.median_m == s.mean_m == s.max_m == 100.0
        assert s.cdf == [(100.0, 1.0)]

    def test_cdf_shape(self, rng):
        e = rng.exponential(80, size=501)
        s = ErrorStats.from_errors(e)
        fr = [q for _, q in s.cdf]
        assert fr == sorted(fr) and fr[-1] == 1.0
        xs = [x for x, _ in s.cdf]
        assert xs == sorted(xs)
        # the median is the cdf's middle point for odd n
        assert s.median_m == xs[250]
        assert s.p75_m <= s.p90_m <= s.max_m

    def test_empty(self):
        with pytest.raises(ValidationError):
            ErrorStats.from_errors([])


def test_zero_error_when_truth_is_grid_centroid():
    db = sectored_db([("A", 0.0, 0.0), ("B", 1000.0, 0.0)], n_sectors=1)
    table = precompute(db, GridSpec(-100, -100, 100, 100, 50))
    # the whole grid is A's region; its centroid is the origin
    scans = [Scan((ScanEntry("A_1a", -60.0),), ground_truth=(0.0, 0.0), scan_id=str(k)) for k in range(5)]
    ev = evaluate(scans, table, db)
    assert ev.stats["crescendo"].median_m == 0.0
    assert ev.stats["cell_id"].median_m == 0.0


def test_evaluate_small(small):
    db, data, table = small
    ev = evaluate(data, table, db)
    assert set(ev.stats) == set(METHODS)
    for s in ev.stats.values():
        assert s.n == len(data) and s.median_m >= 0
    assert ev.stats["crescendo"].mean_runtime_us > 0
    assert math.isnan(ev.stats["cell_id"].mean_runtime_us)
    assert len(ev.results) == len(data)


def test_unusable_scans_excluded(small):
    db, data, table = small
    bad = Scan((ScanEntry("nope", -50.0),), ground_truth=(0.0, 0.0), scan_id="x")
    ev = evaluate(data.scans[:10] + [bad], table, db)
    assert ev.n_excluded == 1 and ev.n_dropped_entries == 1
    assert all(s.n == 10 for s in ev.stats.values())
    with pytest.raises(NoUsableCellsError):
        evaluate([bad], table, db)


def test_missing_truth(small):
    db, data, table = small
    with pytest.raises(ValidationError):
        evaluate([Scan(data.scans[0].entries)], table, db)


def test_timing_shape(small):
    db, data, table = small
    rt = time_localize(data.scans[:20], [table, table], db, repeats=2)
    assert len(rt) == 2 and all(r > 0 for r in rt)


class TestSweeps:
    def test_single_step(self):
        rows = sweep_grid_size([50], SMALL, n_samples=60, repeats=1)
        assert len(rows) == 1
        r = rows[0]
        assert r["n_points"] == r["nx"] * r["ny"]
        assert r["n_samples"] == 60

    def test_step_bounds(self):
        with pytest.raises(ValidationError):
            sweep_grid_size([10], SMALL, n_samples=10)

    def test_density_rows(self):
        cfg = SimConfig.square(0.2, density=224.0, rng_seed=5)
        rows = sweep_density([21, 100, 224], cfg, n_samples=80)
        assert [r["density"] for r in rows] == [21, 100, 224]
        cells = [r["n_cells"] for r in rows]
        assert cells == sorted(cells) and cells[-1] == round(224 * 0.2)
        for r in rows:
            assert abs(r["actual_density"] - r["density"]) / r["density"] < 0.15

    def test_density_beyond_network(self):
        cfg = SimConfig.square(0.2, density=100.0)
        with pytest.raises(ValidationError):
            sweep_density([200], cfg, n_samples=20)

    def test_density_bounds(self):
        with pytest.raises(ValidationError):
            sweep_density([5], SMALL, n_samples=20)

    def test_density_deterministic(self):
        a = sweep_density([50, 150], SMALL, n_samples=50)
        b = sweep_density([50, 150], SMALL, n_samples=50)
        assert a == b


class TestReports:
    @pytest.fixture
    def report(self, small):
        db, data, table = small
        return comparison_report(evaluate(data, table, db), {"seed": 2})

    def test_json(self, report, tmp_path):
        report.write(tmp_path / "r.json")
        doc = json.loads((tmp_path / "r.json").read_text())
        assert doc["config"]["seed"] == 2
        assert "error_metric" in doc["config"]
        assert set(doc["methods"]) == set(METHODS)
        assert doc["methods"]["crescendo"]["cdf"][-1][1] == 1.0
        assert doc["counts"]["n_samples"] == 150

    def test_csv(self, report, tmp_path):
        report.sweeps["grid_size"] = [{"step_m": 50.0, "median_m": 1.0}]
        report.write(tmp_path / "r.csv", "csv")
        rows = list(csv.reader((tmp_path / "r.csv").open()))
        assert rows[0][:2] == ["method", "n"]
        assert [r[0] for r in rows[1:4]] == list(METHODS)
        assert ["sweep:grid_size"] in rows
        assert json.loads((tmp_path / "r.csv.config.json").read_text())["seed"] == 2

    def test_cdf_files(self, report, tmp_path):
        paths = report.write_cdf_files(tmp_path / "cdf")
        assert sorted(p.name for p in paths) == sorted(f"{m}.cdf.dat" for m in METHODS)
        data = np.loadtxt(paths[0])
        assert data.shape == (150, 2) and data[-1, 1] == 1.0

    def test_unknown_format(self, report, tmp_path):
        with pytest.raises(ValueError):
            report.write(tmp_path / "r.x", "xml")

    def test_sweep_only_report(self, tmp_path):
        r = BenchmarkReport(config={"a": 1}, sweeps={"density": [{"density": 21.0, "m": 3.0}]})
        r.write(tmp_path / "s.csv", "csv")
        assert "sweep:density" in (tmp_path / "s.csv").read_text()

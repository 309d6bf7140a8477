import csv
import json
import math
import subprocess
import sys

import pytest

from cellvoronoi.cli import RESULT_COLUMNS, run
from cellvoronoi.evaluation import evaluate
from cellvoronoi.locator import localize
from cellvoronoi.network import load_network
from cellvoronoi.precompute import load_table
from cellvoronoi.scans import read_scans
from cellvoronoi.simulator import SimConfig, generate_dataset, generate_network


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run(["simulate", "--area", "0.2", "--density", "150", "--samples", "80", "--seed", "4",
                "--out", str(d / "sim")]) == 0
    assert run(["precompute", "--network", str(d / "sim/network"), "--step", "40",
                "--out", str(d / "t.bin"), "--json-debug", str(d / "t.json")]) == 0
    return d


def test_simulate_outputs(pipeline):
    sim = pipeline / "sim"
    assert {p.name for p in (sim / "network").iterdir()} == {"sites.csv", "sectors.csv", "cells.csv"}
    meta = json.loads((sim / "sim_config.json").read_text())
    assert meta["config"]["rng_seed"] == 4
    assert meta["samples_written"] + meta["no_coverage"] == 80
    assert meta["n_cells"] == 30


def test_simulate_reproducible(pipeline, tmp_path):
    args = ["simulate", "--area", "0.2", "--density", "150", "--samples", "80", "--seed", "4"]
    assert run(args + ["--out", str(tmp_path / "again")]) == 0
    for name in ("network/sites.csv", "network/sectors.csv", "network/cells.csv", "scans.csv", "sim_config.json"):
        assert (tmp_path / "again" / name).read_bytes() == (pipeline / "sim" / name).read_bytes()


def test_simulate_matches_library(pipeline):
    cfg = SimConfig.square(0.2, density=150.0, rng_seed=4)
    db = load_network(pipeline / "sim/network")
    assert db.fingerprint == generate_network(cfg).fingerprint
    scans = read_scans(pipeline / "sim/scans.csv", db)
    want = generate_dataset(cfg, 80, db).scans
    assert [s.entries for s in scans] == [s.entries for s in want]
    for a, b in zip(scans, want):
        assert math.dist(a.ground_truth, b.ground_truth) < 1e-6


def test_json_network_format(tmp_path):
    assert run(["simulate", "--samples", "5", "--network-format", "json", "--out", str(tmp_path)]) == 0
    assert load_network(tmp_path / "network.json").cells


def test_dump_config(capsys):
    assert run(["simulate", "--dump-config", "--density", "50"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["density"] == 50
    assert cfg["propagation"]["path_loss_exponent"] == 3.0
    assert SimConfig.from_dict(cfg).density == 50


def test_config_file(tmp_path, capsys):
    (tmp_path / "c.toml").write_text('mode = "ideal"\nrng_seed = 21\n')
    assert run(["simulate", "--dump-config", "--config", str(tmp_path / "c.toml")]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["mode"] == "ideal" and cfg["rng_seed"] == 21


def test_precompute_outputs(pipeline, capsys):
    t = load_table(pipeline / "t.bin", load_network(pipeline / "sim/network"))
    assert len(json.loads((pipeline / "t.json").read_text())["records"]) == len(t)
    side = json.loads((pipeline / "t.bin.config.json").read_text())
    assert side["grid"]["nx"] == t.spec.nx and side["grid"]["step"] == 40


def test_precompute_bbox(pipeline, tmp_path, capsys):
    assert run(["precompute", "--network", str(pipeline / "sim/network"), "--bbox=-100,-100,100,100",
                "--step", "50", "--out", str(tmp_path / "b.bin")]) == 0
    assert "5 x 5 = 25 points" in capsys.readouterr().out


def test_localize_matches_library(pipeline):
    out = pipeline / "res.csv"
    assert run(["localize", "--table", str(pipeline / "t.bin"), "--network", str(pipeline / "sim/network"),
                "--scans", str(pipeline / "sim/scans.csv"), "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert list(rows[0]) == RESULT_COLUMNS
    db = load_network(pipeline / "sim/network")
    table = load_table(pipeline / "t.bin", db)
    scans = read_scans(pipeline / "sim/scans.csv", db)
    assert len(rows) == len(scans)
    for row, scan in zip(rows, scans):
        est = localize(scan, table, db)
        assert float(row["est_lat"]) == est.geo.lat and float(row["est_lon"]) == est.geo.lon
        assert int(row["max_score"]) == est.max_score
        assert float(row["error_m"]) == pytest.approx(math.dist(est.position, scan.ground_truth))
    side = json.loads((pipeline / "res.csv.config.json").read_text())
    assert side["n_scans"] == len(scans) and side["n_failed"] == 0


def test_localize_unknown_cells_row(pipeline, tmp_path):
    lines = (pipeline / "sim/scans.csv").read_text().splitlines()
    header = lines[0].split(",")
    bad = dict.fromkeys(header, "")
    bad.update(scan_id="bad", timestamp="", cell_id_1="ghost", rss_1="-70")
    row = ",".join(bad[h] for h in header)
    (tmp_path / "s.csv").write_text("\n".join([lines[0], lines[1], row]) + "\n")
    assert run(["localize", "--table", str(pipeline / "t.bin"), "--network", str(pipeline / "sim/network"),
                "--scans", str(tmp_path / "s.csv"), "--out", str(tmp_path / "r.csv")]) == 0
    rows = list(csv.DictReader((tmp_path / "r.csv").open()))
    assert rows[1]["scan_id"] == "bad" and rows[1]["est_lat"] == ""


def test_evaluate_matches_library(pipeline):
    out = pipeline / "ev.json"
    assert run(["evaluate", "--table", str(pipeline / "t.bin"), "--network", str(pipeline / "sim/network"),
                "--scans", str(pipeline / "sim/scans.csv"), "--out", str(out), "--cdf-dir", str(pipeline / "cdf")]) == 0
    doc = json.loads(out.read_text())
    db = load_network(pipeline / "sim/network")
    ev = evaluate(read_scans(pipeline / "sim/scans.csv", db), load_table(pipeline / "t.bin", db), db)
    for m, s in ev.stats.items():
        assert doc["methods"][m]["median_m"] == s.median_m
    assert (pipeline / "cdf" / "crescendo.cdf.dat").exists()


def test_evaluate_csv(pipeline):
    out = pipeline / "ev.csv"
    assert run(["evaluate", "--table", str(pipeline / "t.bin"), "--network", str(pipeline / "sim/network"),
                "--scans", str(pipeline / "sim/scans.csv"), "--out", str(out), "--format", "csv"]) == 0
    assert out.read_text().startswith("method,n,median_m")


def test_stale_table_exit_code(pipeline, tmp_path):
    assert run(["simulate", "--samples", "5", "--seed", "99", "--out", str(tmp_path)]) == 0
    rc = run(["localize", "--table", str(pipeline / "t.bin"), "--network", str(tmp_path / "network"),
              "--scans", str(tmp_path / "scans.csv"), "--out", str(tmp_path / "r.csv")])
    assert rc == 1


def test_corrupt_table_exit_code(pipeline, tmp_path):
    (tmp_path / "t.bin").write_bytes(b"")
    rc = run(["evaluate", "--table", str(tmp_path / "t.bin"), "--network", str(pipeline / "sim/network"),
              "--scans", str(pipeline / "sim/scans.csv"), "--out", str(tmp_path / "o.json")])
    assert rc == 1


def test_sweeps(tmp_path):
    common = ["--area", "0.2", "--density", "150", "--samples", "40"]
    assert run(["sweep", "grid", *common, "--steps", "50,100", "--out", str(tmp_path / "g.json")]) == 0
    rows = json.loads((tmp_path / "g.json").read_text())["sweeps"]["grid_size"]
    assert [r["step_m"] for r in rows] == [50, 100]
    assert run(["sweep", "density", *common, "--densities", "30,150", "--out", str(tmp_path / "d.csv"),
                "--format", "csv"]) == 0
    assert "sweep:density" in (tmp_path / "d.csv").read_text()


@pytest.mark.parametrize("argv", [[], ["bogus"], ["precompute"], ["sweep", "grid", "--steps", "a,b", "--out", "x"]])
def test_usage_errors(argv, capsys):
    assert run(argv) == 2


def test_missing_file(tmp_path, capsys):
    rc = run(["precompute", "--network", str(tmp_path / "nothing"), "--out", str(tmp_path / "t.bin")])
    assert rc == 2
    assert "no such file" in capsys.readouterr().err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "cellvoronoi", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == "0.1.0"


def test_log_env(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("CRESCENDO_LOG", "debug")
    assert run(["simulate", "--samples", "3", "--out", str(tmp_path)]) == 0

import csv
import hashlib
import json

import numpy as np
import pytest

from enduromap import cli
from enduromap.crossbar import NumericalError, read_grid_csv
from enduromap.placement import brute_force_place
from enduromap.crossbar import build_endurance_maps, default_config
from enduromap.workload import load_workload


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workload(tmp_path_factory):
    root = tmp_path_factory.mktemp("gen")
    assert run("gen-workload", "--clusters", 20, "--pre", 6, "--post", 6, "--seed", 7, "--output", root) == 0
    return root / "workloads" / "workload.json"


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# -- endurance-map ----------------------------------------------------------------------

def test_endurance_map_full_size(tmp_path):
    assert run("endurance-map", "--tech", 45, "--temp", 25, "--size", 128, "--output", tmp_path) == 0
    maps = tmp_path / "maps"
    for name in ("voltage_lrs", "voltage_hrs", "endurance_lrs", "endurance_hrs", "delay"):
        assert read_grid_csv(maps / f"{name}.csv").shape == (128, 128)
        meta = json.loads((maps / f"{name}.json").read_text())
        assert meta["M"] == 128 and meta["node_nm"] == 45
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "endurance-map" and manifest["config"]["tech"] == 45
    for rel, digest in manifest["outputs"].items():
        assert hashlib.sha256((tmp_path / rel).read_bytes()).hexdigest() == digest


def test_scaling_spread_at_same_drive(tmp_path):
    spreads = {}
    for tech in (65, 16):
        out = tmp_path / str(tech)
        assert run("endurance-map", "--tech", tech, "--size", 32, "--drive", 1.0, "--output", out) == 0
        spreads[tech] = json.loads((out / "maps" / "voltage_lrs.json").read_text())["spread"]
    assert spreads[16] > spreads[65]


def test_endurance_map_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run("endurance-map", "--size", 16, "--tech", 32, "--output", tmp_path / name) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_device_params_flag(tmp_path):
    params = tmp_path / "dev.ini"
    params.write_text("duration = 0.002\n")
    assert run("endurance-map", "--size", 8, "--output", tmp_path / "a") == 0
    assert run("endurance-map", "--size", 8, "--device-params", params, "--output", tmp_path / "b") == 0
    a = read_grid_csv(tmp_path / "a" / "maps" / "endurance_lrs.csv")
    b = read_grid_csv(tmp_path / "b" / "maps" / "endurance_lrs.csv")
    np.testing.assert_allclose(b, a / 2)


# -- place -----------------------------------------------------------------------------------

def test_place_exact_routes_to_oracle(tmp_path):
    gen = tmp_path / "g"
    assert run("gen-workload", "--clusters", 1, "--pre", 2, "--post", 2, "--output", gen) == 0
    wpath = gen / "workloads" / "workload.json"
    assert run("place", "--workload", wpath, "--cluster", "c0", "--size", 3, "--exact", "--output", tmp_path) == 0
    data = json.loads((tmp_path / "placements" / "c0.json").read_text())
    assert data["solver"]["oracle_used"]
    maps = build_endurance_maps(default_config(45, M=3))
    assert data["lifetime"] == brute_force_place(load_workload(wpath).clusters[0], maps).lifetime


def test_place_seed_behaviour(tmp_path, workload):
    out = {}
    for seed in (1, 1, 2, 3):
        d = tmp_path / f"s{seed}-{len(out)}"
        assert run("place", "--workload", workload, "--cluster", "c3", "--size", 16, "--seed", seed,
                   "--budget", 20, "--restarts", 2, "--output", d) == 0
        out[d.name] = (d / "placements" / "c3.json").read_bytes()
        data = json.loads(out[d.name])
        assert data["lifetime"] >= data["solver"]["greedy_lifetime"]
    first, second = list(out.values())[:2]
    assert first == second


def test_place_unknown_cluster(tmp_path, workload):
    assert run("place", "--workload", workload, "--cluster", "nope", "--output", tmp_path) == 2


# -- map ---------------------------------------------------------------------------------------

def test_map_unlimited_one_cluster_per_crossbar(tmp_path, workload):
    assert run("map", "--workload", workload, "--size", 16, "--budget", 5, "--restarts", 1, "--output", tmp_path) == 0
    sol = json.loads((tmp_path / "solutions" / "solution.json").read_text())
    assert sol["hardware"]["mode"] == "unlimited"
    assert all(len(e["clusters"]) == 1 for e in sol["per_crossbar"])
    assert len(sol["per_crossbar"]) == 20


def test_map_limited_respects_size(tmp_path, workload):
    assert run("map", "--workload", workload, "--size", 32, "--crossbars", 4, "--budget", 5, "--restarts", 1,
               "--hc-budget", 20, "--patience", 5, "--output", tmp_path) == 0
    sol = json.loads((tmp_path / "solutions" / "solution.json").read_text())
    assert sorted(set(sol["assign"].values())) == [0, 1, 2, 3]
    for e in sol["per_crossbar"]:
        assert len(e["rows"]) <= 32 and len(e["cols"]) <= 32
        assert len(set(e["rows"].values())) == len(e["rows"])
        assert len(set(e["cols"].values())) == len(e["cols"])


def test_map_baseline_adds_ratios(tmp_path, workload):
    assert run("map", "--workload", workload, "--size", 16, "--budget", 5, "--restarts", 1, "--baseline", 100,
               "--output", tmp_path) == 0
    report = json.loads((tmp_path / "reports" / "report.json").read_text())
    assert set(report["ratios"]) == {"lifetime", "hardware_delay", "avg_rram_voltage"}
    assert report["baseline"]["n_seeds"] == 100
    rows = list(csv.DictReader((tmp_path / "reports" / "report.csv").open()))
    assert all(r["ratio"] for r in rows)


def test_map_infeasible_exit_code(tmp_path, workload):
    assert run("map", "--workload", workload, "--size", 4, "--output", tmp_path) == 3
    assert run("map", "--workload", workload, "--size", 8, "--crossbars", 2, "--output", tmp_path) == 3


def test_thread_count_does_not_change_outputs(tmp_path, workload, monkeypatch):
    for threads in ("1", "3"):
        monkeypatch.setenv("ENDUROMAP_THREADS", threads)
        assert run("map", "--workload", workload, "--size", 16, "--budget", 5, "--restarts", 1, "--baseline", 10,
                   "--output", tmp_path / threads) == 0
    assert tree_bytes(tmp_path / "1") == tree_bytes(tmp_path / "3")


# -- gen / evaluate --------------------------------------------------------------------------------

def test_gen_same_seed_same_bytes(tmp_path):
    for name in ("a", "b"):
        assert run("gen-workload", "--clusters", 5, "--seed", 3, "--output", tmp_path / name) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_gen_invalid_density(tmp_path):
    assert run("gen-workload", "--density", 1.5, "--output", tmp_path) == 2


def test_pipeline_round_trip(tmp_path, workload):
    assert run("map", "--workload", workload, "--size", 16, "--budget", 5, "--restarts", 1, "--output",
               tmp_path / "m") == 0
    sol = tmp_path / "m" / "solutions" / "solution.json"
    assert run("evaluate", "--workload", workload, "--solution", sol, "--size", 16, "--output", tmp_path / "e") == 0
    a = json.loads((tmp_path / "m" / "reports" / "report.json").read_text())
    b = json.loads((tmp_path / "e" / "reports" / "report.json").read_text())
    assert a == b


def test_evaluate_rejects_tampered_solution(tmp_path, workload):
    assert run("map", "--workload", workload, "--size", 16, "--budget", 5, "--restarts", 1, "--output",
               tmp_path / "m") == 0
    data = json.loads((tmp_path / "m" / "solutions" / "solution.json").read_text())
    data["per_crossbar"][1]["clusters"].append(data["per_crossbar"][0]["clusters"][0])
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    assert run("evaluate", "--workload", workload, "--solution", bad, "--size", 16, "--output", tmp_path / "e") == 2


# -- errors and sweeps ------------------------------------------------------------------------------

@pytest.mark.parametrize("argv", [
    ["map"],
    ["endurance-map", "--tech", "22"],
    ["endurance-map", "--size", "0"],
    ["endurance-map", "--crossbars", "lots"],
    ["endurance-map", "--sweep", "colour=1,2"],
    ["bogus"],
])
def test_usage_errors(argv, tmp_path, capsys):
    assert cli.main(argv + ["--output", str(tmp_path)]) == 2


def test_missing_and_malformed_inputs(tmp_path):
    assert run("map", "--workload", tmp_path / "none.json", "--output", tmp_path) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{\n  \"clusters\": [,]\n}")
    assert run("map", "--workload", broken, "--output", tmp_path) == 2
    params = tmp_path / "dev.ini"
    params.write_text("nonsense = 3\n")
    assert run("endurance-map", "--size", 4, "--device-params", params, "--output", tmp_path) == 2


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericalError("singular")
    monkeypatch.setattr(cli, "build_voltage_maps", boom)
    assert run("endurance-map", "--size", 4, "--output", tmp_path) == 4


def test_sweep_writes_combined_table(tmp_path, workload):
    assert run("map", "--workload", workload, "--size", 16, "--budget", 5, "--restarts", 1, "--baseline", 10,
               "--sweep", "tech=65,16", "--output", tmp_path) == 0
    rows = list(csv.DictReader((tmp_path / "reports" / "sweep.csv").open()))
    assert {r["value"] for r in rows} == {"65", "16"}
    assert {r["metric"] for r in rows} == {"lifetime", "hardware_delay", "avg_rram_voltage"}
    assert all(r["ratio"] for r in rows)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["sweep"]["runs"] == ["sweep/tech=65", "sweep/tech=16"]
    for sub in manifest["sweep"]["runs"]:
        assert json.loads((tmp_path / sub / "manifest.json").read_text())["config"]["tech"] == int(sub.split("=")[1])

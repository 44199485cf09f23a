import json
import subprocess
import sys
from pathlib import Path

import pytest

from hhoch.cli import OUTPUT_ENV, builtin_configs, load_config, main
from hhoch.exact import ManufacturedSolution
from hhoch.mesh import generate_cartesian, load_mesh
from hhoch.verification import compute_errors, manufactured_run

DATA = Path(__file__).parent / "data"


def small_run_config(tmp_path, **over):
    cfg = {
        "name": "tiny",
        "mesh": {"generator": "cartesian", "n": 4},
        "k": 0,
        "gamma": 0.1,
        "tau": 0.001,
        "t_final": 0.003,
        "scheme": "BDF2",
        "initial": {"kind": "random", "cells": 4},
        "seed": 7,
        "snapshot_times": [0.0, 0.003],
    }
    cfg.update(over)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_builtin_configs_load():
    names = builtin_configs()
    assert {"ellipse", "cross", "spinodal_k0", "spinodal_k1", "manufactured", "verify"} <= set(names)
    for n in names:
        assert isinstance(load_config(n), dict)


def test_run_outputs_and_rerun_from_manifest(tmp_path, capsys):
    cfg = small_run_config(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.glob("*.vtk")) == ["snapshot_0000000.vtk", "snapshot_0000003.vtk"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["config"]["k"] == 0
    assert manifest["mesh"] and set(manifest["timings"]) >= {"mesh", "solve", "output"}
    rerun = tmp_path / "rerun"
    assert main(["run", "--config", str(out / "manifest.json"), "--out", str(rerun)]) == 0
    assert (rerun / "monitors.csv").read_text() == (out / "monitors.csv").read_text()
    lines = (out / "monitors.csv").read_text().splitlines()
    assert lines[0].startswith("step") and len(lines) == 5


def test_run_manufactured_reports_errors(tmp_path):
    cfg = small_run_config(tmp_path, initial={"kind": "manufactured"}, gamma=1.0, tau=0.1, t_final=0.2, scheme="BE", snapshot_times=[])
    out = tmp_path / "m"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    errors = json.loads((out / "manifest.json").read_text())["errors"]
    assert set(errors) == {"energy_c", "energy_w", "l2_c", "l2_w"}
    ex = ManufacturedSolution(1.0)
    space, state = manufactured_run(generate_cartesian(4, 4), 0, ex, 0.2, 0.1)
    ref = compute_errors(space, state.c, state.w, *ex.at(state.t)).errors()
    assert errors == pytest.approx(ref, rel=1e-12)


def test_output_directory_from_environment(tmp_path, monkeypatch):
    cfg = small_run_config(tmp_path, t_final=0.001, snapshot_times=[])
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "envdir"))
    assert main(["run", "--config", str(cfg)]) == 0
    assert (tmp_path / "envdir" / "tiny" / "monitors.csv").exists()


def test_matrix_dump(tmp_path):
    cfg = small_run_config(tmp_path, t_final=0.001, snapshot_times=[], dump_matrix=True)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "jacobian.mtx").read_text().startswith("%%MatrixMarket")


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["mesh-info", str(tmp_path / "missing.typ1")]) == 2
    assert main(["mesh-info", str(DATA / "malformed.typ1"), "--format", "fvca5"]) == 2
    bad_mesh = small_run_config(tmp_path, mesh={"path": str(DATA / "malformed.typ1"), "format": "fvca5"})
    assert main(["run", "--config", str(bad_mesh), "--out", str(tmp_path / "x")]) == 2
    assert main(["run", "--config", str(small_run_config(tmp_path, k=3)), "--out", str(tmp_path / "x")]) == 2
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 2
    assert main(["convergence", "--k", "0", "--levels", "4", "8"]) == 2
    assert main(["verify", "--levels"]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 2


def test_mesh_info_counts(capsys):
    assert main(["mesh-info", str(DATA / "mesh1_tri.typ1"), "--json"]) == 0
    info = json.loads(capsys.readouterr().out)
    mesh = load_mesh(DATA / "mesh1_tri.typ1")
    assert info["n_elements"] == mesh.n_elements == 8
    assert info["n_faces"] == mesh.n_faces == 16
    assert main(["mesh-info", "--generator", "cartesian", "--n", "1"]) == 0
    assert "1" in capsys.readouterr().out


def test_verify_exit_codes(tmp_path, capsys):
    assert main(["verify", "--k", "0", "--levels", "4", "8", "16", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
    assert json.loads((tmp_path / "properties.json").read_text())["passed"]
    assert main(["verify", "--k", "0", "--levels", "4", "8", "16", "--flip-stabilization"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_convergence_table(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"k": 0, "t_final": 0.2, "tau": 0.1}))
    assert main(["convergence", "--config", str(cfg), "--family", "cartesian", "--levels", "4", "8", "16", "32", "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "slope" in out and len(out.strip().splitlines()) == 1 + 1 + 4 + 1
    rep = json.loads((tmp_path / "o" / "convergence.json").read_text())
    assert abs(rep["slopes"]["energy_c"] - 1) < 0.25


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "hhoch", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()

import json
import subprocess
import sys

import numpy as np
import pytest

from gensympl.cli import EXAMPLES, main
from gensympl.gridio import read_table_csv, write_grid_csv
from gensympl.forms import BoxDomain


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = main([*argv, "--out", str(out), "--no-timestamps"])
    return code, json.loads((out / "report.json").read_text()), out


def write(tmp_path, text, name="p.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_examples_are_written(tmp_path):
    code, report, out = run(tmp_path, "examples")
    assert code == 0
    assert sorted(p.name for p in out.glob("*.toml")) == sorted(EXAMPLES)


def test_canonical_verify_passes(tmp_path):
    path = write(tmp_path, EXAMPLES["canonical.toml"])
    code, report, out = run(tmp_path, "verify", "--problem", path, "--eps-index", "0")
    assert code == 0 and report["status"] == "ok" and report["exit_code"] == 0
    assert list(out.glob("phi_eps*.csv")) and list(out.glob("residual_eps*.csv"))


def test_scaled_family_fails_certification(tmp_path, capsys):
    code, report, _ = run(tmp_path, "star", "--problem", write(tmp_path, EXAMPLES["scaled_eps.toml"]))
    assert code == 3 and report["status"] == "star-failed"
    assert "certification failed" in capsys.readouterr().err


def test_invalid_problem_lists_every_problem(tmp_path, capsys):
    bad = """version = 2
[form]
corpus = "canonical"
entries = { "1,2" = "x1" }
[pipeline]
step = -1
bogus = 3
"""
    code, report, _ = run(tmp_path, "star", "--problem", write(tmp_path, bad))
    assert code == 2 and report["status"] == "invalid"
    errs = " ".join(report["errors"])
    for key in ("version", "form", "pipeline.step", "bogus"):
        assert key in errs
    assert capsys.readouterr().err.count("error:") == len(report["errors"]) >= 4


def test_missing_problem_file(tmp_path):
    code, report, _ = run(tmp_path, "star", "--problem", str(tmp_path / "nope.toml"))
    assert code == 2 and report["status"] == "invalid"


def test_missing_problem_flag(tmp_path):
    code, report, _ = run(tmp_path, "star")
    assert code == 2 and "--problem" in report["errors"][0]


def test_eps_index_out_of_range(tmp_path):
    code, report, _ = run(tmp_path, "star", "--problem", write(tmp_path, EXAMPLES["canonical.toml"]),
                          "--eps-index", "99")
    assert code == 2 and "eps-index" in report["errors"][0]


def test_reports_are_deterministic(tmp_path):
    path = write(tmp_path, EXAMPLES["jump_expression.toml"])
    _, _, a = run(tmp_path, "star", "--problem", path, name="a")
    _, _, b = run(tmp_path, "star", "--problem", path, name="b")
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()


def test_poisson_outputs(tmp_path):
    code, report, out = run(tmp_path, "poisson", "--problem",
                            write(tmp_path, EXAMPLES["poisson_canonical.toml"]))
    assert code == 0
    assert report["brackets"]["{x1,xi1}"]["min"] == pytest.approx(-1.0, abs=1e-9)
    assert report["brackets"]["{xi1,x1}"]["max"] == pytest.approx(1.0, abs=1e-9)
    assert report["jacobi"]["f-g-h"] <= 1e-8
    meta, cols, data = read_table_csv(out / "brackets.csv")
    assert cols[:4] == ["x1", "x2", "x3", "x4"] and data.shape == (3 ** 4, 4 + 6)


def test_geodesic_outputs(tmp_path):
    code, report, out = run(tmp_path, "geodesic", "--problem",
                            write(tmp_path, EXAMPLES["geodesic_flat.toml"]))
    assert code == 0
    assert max(report["geodesic"]["energy_drift"]) <= 1e-12
    assert list(out.glob("geodesic_eps*.csv"))


def test_grid_form_missing_file(tmp_path):
    text = """version = 1
[form]
grid = { "1,2" = "missing.csv" }
"""
    code, report, _ = run(tmp_path, "star", "--problem", write(tmp_path, text))
    assert code == 2 and "missing.csv" in " ".join(report["errors"])


def test_grid_form_from_file(tmp_path):
    dom = BoxDomain.cube(2, 1.5, 31)
    write_grid_csv(tmp_path / "w12.csv", dom, np.full(dom.grid, 2.0), "omega_12")
    text = """version = 1
[form]
grid = { "1,2" = "w12.csv" }
[pipeline]
center = [0.0, 0.0]
"""
    code, report, _ = run(tmp_path, "star", "--problem", write(tmp_path, text))
    assert code == 0
    assert report["certificate"]["C1"] == pytest.approx(0.99 * 2.0)


def test_ladder_family_verdict(tmp_path):
    text = """version = 1
[form]
corpus = "canonical"
[ladder]
eps_max = 0.5
eps_min = 0.01
count = 7
family = "3 * eps^-2"
"""
    code, report, _ = run(tmp_path, "ladder", "--problem", write(tmp_path, text))
    assert code == 0
    assert report["verdict"]["classification"] == "moderate(2)"
    assert report["verdict"]["fitted_exponent"] == pytest.approx(-2.0, abs=1e-9)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gensympl", "examples", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "report.json" in proc.stdout

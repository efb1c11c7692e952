import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import FIXTURES
from kinkfilter.cli import main
from kinkfilter.io import read_csv, sha256_file

FIXTURE = str(FIXTURES / "synthetic_region.csv")
GOLDEN = FIXTURES / "golden"
BASE = ["--input", FIXTURE, "--population", "1e7"]
SMALL_GRID = ["--kappa-set", "2,3", "--lambda-set", "1,4"]


def run(argv, out):
    return main([argv[0], *argv[1:], "--out-dir", str(out)])


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = run(["run", *BASE, *SMALL_GRID, "--t0", "2020-03-20", "--rho", "0.5", "--threads", "1"], out)
    return code, out


def test_run_writes_artifacts(full_run):
    code, out = full_run
    assert code == 0
    names = {p.name for p in out.iterdir()}
    assert names == {
        "series.csv", "cv_surface.csv", "kinks.csv", "report.csv", "segments.csv", "manifest.json",
        "trend_sparse_hp.csv", "trend_hp.csv", "trend_l1.csv", "trend_sqrt_l1.csv",
    }
    header, rows = read_csv(out / "trend_sparse_hp.csv")
    assert header == ["date", "y", "f", "kink_flag"]
    assert sum(int(r[3]) for r in rows) == 3


def test_golden_tables(full_run):
    _, out = full_run
    for name in ("kinks.csv", "segments.csv"):
        assert (out / name).read_text() == (GOLDEN / name).read_text(), name


def test_manifest(full_run):
    _, out = full_run
    m = json.loads((out / "manifest.json").read_text())
    assert m["command"] == "run"
    assert "threads" not in m["config"] and "out_dir" not in m["config"]
    blob = json.dumps(m)
    assert "numpy" in blob and "sparse_hp" in blob


def test_bytes_identical_across_threads(full_run, tmp_path):
    _, out = full_run
    code = run(["run", *BASE, *SMALL_GRID, "--t0", "2020-03-20", "--rho", "0.5", "--threads", "2"], tmp_path)
    assert code == 0
    for p in out.iterdir():
        assert sha256_file(p) == sha256_file(tmp_path / p.name), p.name


def test_config_file_and_precedence(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"input: {FIXTURE}\npopulation: 1.0e7\nkappa: 2\nlam: 1.0\nfilters: [sparse_hp]\n")
    assert main(["filter", "--config", str(cfg), "--kappa", "3", "--out-dir", str(tmp_path / "o")]) == 0
    _, rows = read_csv(tmp_path / "o" / "kinks.csv")
    assert len(rows) == 3


@pytest.mark.parametrize(
    "text",
    ["lambda_set: []\n", "bogus_key: 1\n", "noise: cauchy\n", "kappa_set: [2, x]\n"],
)
def test_bad_config_exit_2(tmp_path, capsys, text):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"input: {FIXTURE}\npopulation: 1.0e7\n" + text)
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 2
    assert "kinkfilter:" in capsys.readouterr().err


def test_invalid_noise_exit_2(tmp_path):
    assert run(["risklab", "--noise", "cauchy", "--reps", "1"], tmp_path) == 2


def test_missing_input_exit_2(tmp_path):
    assert run(["series", "--input", str(tmp_path / "nope.csv"), "--population", "1e7"], tmp_path) == 2


def test_series_command(tmp_path):
    assert run(["series", *BASE], tmp_path) == 0
    header, rows = read_csv(tmp_path / "series.csv")
    assert header[0] == "date" and len(rows) == 78


def test_budget_exit_3(tmp_path):
    assert run(["filter", *BASE, "--kappa", "3", "--lambda", "1", "--filters", "sparse_hp",
                "--node-budget", "2"], tmp_path) == 3


def test_risklab_zero_noise(tmp_path):
    code = run(["risklab", "--sigma", "0", "--reps", "2", "--T-set", "40,60", "--methods", "sparse_hp",
                "--risk-lambda", "1e-9"], tmp_path)
    assert code == 0
    _, rows = read_csv(tmp_path / "risk_study.csv")
    assert len(rows) == 4
    header, rows = read_csv(tmp_path / "risk_summary.csv")
    assert all(float(v) < 1e-16 for r in rows for h, v in zip(header, r) if "risk" in h or "median" in h)


def test_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("KINKFILTER_THREADS", "2")
    assert run(["tune", *BASE, "--kappa-set", "1", "--lambda-set", "1"], tmp_path) == 0
    monkeypatch.setenv("KINKFILTER_THREADS", "zero")
    assert run(["tune", *BASE, "--kappa-set", "1", "--lambda-set", "1"], tmp_path) == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "kinkfilter", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "kinkfilter" in out.stdout

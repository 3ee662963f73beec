import csv
import json
import os
import subprocess
import sys

import pytest

from ruinlab.cli import EXIT_CONFIG, EXIT_OK, EXIT_TOLERANCE, main

M1_CFG = """[model]
premium_rate = 2
claim_intensity = 1
claims.kind = exponential
claims.params.rate = 1

[run]
seed = 20261016

[ruin]
u = 0, 5, 10
paths = 2000
batches = 10

[limits]
ladder_paths = 2000
quintuple_edges = 0, 1, inf

[output]
grid_end = 5
grid_step = 0.5

[edpf]
paths = 1000
batches = 50
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "m1.ini"
    p.write_text(M1_CFG)
    return str(p)


def _read(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_ruin_command(cfg, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["ruin", "--config", cfg, "--out", str(out)]) == EXIT_OK
    rows = _read(out / "ruin.csv")
    assert [float(r["analytic"]) for r in rows] == pytest.approx([0.5, 0.5 * 2.718281828459045 ** -2.5, 0.5 * 2.718281828459045 ** -5], rel=1e-8)
    assert [r["method"] for r in rows] == ["plain", "tilted", "tilted"]
    assert all(r["verdict"] == "pass" for r in rows)
    head = (out / "ruin.csv").read_text().splitlines()[:4]
    assert head[0].startswith("# ruinlab ") and head[2] == "# seed 20261016"
    assert "ruin" in capsys.readouterr().out


def test_json_output_is_valid(cfg, tmp_path):
    out = tmp_path / "j"
    assert main(["edpf", "--config", cfg, "--out", str(out), "--format", "json"]) == EXIT_OK
    doc = json.loads((out / "edpf.json").read_text())
    assert doc["columns"][:4] == ["lam_p", "eta", "delta", "limit"]
    assert [r[3] for r in doc["rows"]] == pytest.approx([1.0, 1 / 0.9, 1 / 0.75])


def test_limits_command(cfg, tmp_path):
    out = tmp_path / "lim"
    assert main(["limits", "--config", cfg, "--out", str(out)]) == EXIT_OK
    names = set(os.listdir(out))
    assert {"limit_overshoot.csv", "limit_undershoot_max.csv", "limit_joint_cells.csv",
            "limit_passage_delay.csv", "limit_masses.csv"} <= names
    masses = _read(out / "limit_masses.csv")
    assert all(r["status"] == "pass" for r in masses)


def test_seed_override_and_determinism(cfg, tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    main(["ruin", "--config", cfg, "--out", str(a)])
    main(["ruin", "--config", cfg, "--out", str(b), "--workers", "2"])
    main(["ruin", "--config", cfg, "--out", str(c), "--seed", "5"])
    assert (a / "ruin.csv").read_bytes() == (b / "ruin.csv").read_bytes()
    assert (a / "ruin.csv").read_bytes() != (c / "ruin.csv").read_bytes()


def test_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text(M1_CFG.replace("paths = 2000", "paths = -2000"))
    assert main(["ruin", "--config", str(p)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "ruin.paths" in err and "line 12" in err


def test_validate_with_too_few_paths_is_undecided(tmp_path):
    p = tmp_path / "v.ini"
    p.write_text(M1_CFG + "\n[validate]\npaths = 100\nbatches = 2\n")
    out = tmp_path / "v"
    assert main(["validate", "--config", str(p), "--out", str(out)]) == EXIT_TOLERANCE
    rows = _read(out / "validate.csv")
    assert {r["status"] for r in rows} == {"pass", "insufficient"}


def test_console_script(cfg, tmp_path):
    r = subprocess.run([sys.executable, "-m", "ruinlab.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("ruinlab ")
    r = subprocess.run([sys.executable, "-m", "ruinlab.cli", "ruin"], capture_output=True, text=True)
    assert r.returncode != 0

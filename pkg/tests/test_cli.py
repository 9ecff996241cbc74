import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from nacplab.cli import main
from nacplab.scenario import ConfigError, parse_scenario, tomllib

SCEN = Path(__file__).resolve().parents[1] / "scenarios"

MINIMAL = """
version = "1"
seed = 0
shift = 0.0
bc = "dirichlet"
[domain]
kind = "interval"
h = 0.125
[field]
family = "constant"
[time]
T = 1.0
steps = 8
[exponents]
p = 2.0
q = 2.0
"""


def scenario(tmp_path, extra='[[checks]]\nname = "solve_at"\n', body=MINIMAL):
    path = tmp_path / "s.toml"
    path.write_text(body + extra)
    return path


def test_minimal_exit0_with_cmr(tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(SCEN / "minimal.toml"), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text(encoding="utf-8"))
    res = {r["name"]: r for r in rep["checks"]}
    assert rep["exit_code"] == 0
    assert res["solve_at"]["status"] == "pass"
    assert res["solve_at"]["payload"]["c_mr"] > 0
    assert rep["scenario"]["version"] == "1"


def test_unknown_check_exit2(tmp_path, capsys):
    path = scenario(tmp_path, '[[checks]]\nname = "solve_at"\n[[checks]]\nname = "teleport"\n')
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()         # nothing computed or written
    assert "teleport" in capsys.readouterr().err


@pytest.mark.parametrize("edit", [
    ('version = "1"', 'version = "9"'),
    ("p = 2.0", "p = 1.0"),
    ("q = 2.0", "q = inf"),
    ("steps = 8", "steps = 1"),
    ('kind = "interval"', 'kind = "torus"'),
    ('bc = "dirichlet"', 'bc = "periodic"'),
])
def test_invalid_config_exit2(tmp_path, edit):
    path = scenario(tmp_path, body=MINIMAL.replace(*edit))
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 2


def test_bad_cli_values_exit2(tmp_path):
    path = scenario(tmp_path)
    assert main(["run", str(path), "--workers", "0", "--out", str(tmp_path / "o")]) == 2
    assert main(["run", str(tmp_path / "missing.toml")]) == 2


def test_parse_rejects_empty_checks():
    with pytest.raises(ConfigError):
        parse_scenario(tomllib.loads(MINIMAL))


def test_seed_override_and_determinism(tmp_path):
    path = scenario(tmp_path, '[[checks]]\nname = "solve_at"\n[[checks]]\nname = "khintchine"\n')
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    for d in (a, b):
        assert main(["run", str(path), "--out", str(d), "--seed", "3"]) == 0
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    main(["run", str(path), "--out", str(c), "--seed", "4"])
    assert json.loads((c / "report.json").read_text())["scenario"]["seed"] == 4


def test_exit_codes_numerical_and_failed(tmp_path):
    gauss = SCEN / "gaussian.toml"
    assert main(["run", str(gauss), "--out", str(tmp_path / "g")]) == 4
    rep = json.loads((tmp_path / "g" / "report.json").read_text())
    failed = [r for r in rep["checks"] if r["status"] == "fail"]
    assert [r["name"] for r in failed] == ["gaussian_domination"]
    bad = [row for row in failed[0]["payload"]["per_s"] if not row["passed"]]
    assert bad and all("argmax" in row for row in bad)      # witness to reproduce
    assert failed[0]["provenance"]["seed"] == 0


def test_robin_csv_provenance(tmp_path):
    out = tmp_path / "r"
    assert main(["run", str(SCEN / "robin.toml"), "--out", str(out)]) == 0
    with open(out / "robin_sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    for key in ("h", "seed", "mu", "wall_ms"):
        assert all(r[key] != "" for r in rows)
    raw = (out / "robin_sweep.csv").read_bytes()
    assert b"\r\n" in raw
    a09 = [float(r["c_mr"]) for r in rows if float(r["alpha"]) == 0.9]
    assert max(a09) / min(a09) - 1 <= 0.25
    low = [r["label"] for r in rows if float(r["alpha"]) == 0.1]
    assert all(l == "hypothesis-not-met" for l in low)


def test_divergence_suite_columns(tmp_path):
    out = tmp_path / "c"
    assert main(["run", str(SCEN / "checkerboard.toml"), "--out", str(out)]) == 0
    with open(out / "divergence_form_suite.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames
        rows = list(reader)
    for c in ("h", "alpha0", "beta_fit", "gamma_fit", "admissible", "grad_ratio", "kato_ratio",
              "q_norm", "mu", "c_mr", "seed", "wall_ms"):
        assert c in cols
    assert any(c.startswith("vmo_eta_at_") for c in cols)
    assert all(abs(float(r["beta_fit"]) - 0.75) <= 0.05 for r in rows)
    assert all(r["admissible"] in ("True", "true", "1") for r in rows)


def test_meyers_scenario_monotone(tmp_path):
    out = tmp_path / "m"
    assert main(["run", str(SCEN / "meyers.toml"), "--out", str(out)]) == 0
    with open(out / "meyers.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    p4 = sorted((float(r["h"]), float(r["grad_ratio"])) for r in rows if float(r["p"]) == 4)
    ratios = [v for _, v in sorted(p4, reverse=True)]       # coarse -> fine
    assert len(ratios) == 4
    assert all(b > a for a, b in zip(ratios, ratios[1:]))


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "nacplab.cli", "run", str(SCEN / "minimal.toml"),
                        "--out", str(tmp_path / "x")], capture_output=True, text=True)
    assert r.returncode == 0
    assert "PASS" in r.stdout and "report:" in r.stdout


def test_numerical_failure_exit3(tmp_path, monkeypatch):
    from nacplab import cli
    from nacplab.errors import SingularityError

    def boom(*a, **k):
        raise SingularityError("singular A(t); apply a shift")
    monkeypatch.setattr(cli, "run_checks", boom)
    assert cli.main(["run", str(scenario(tmp_path)), "--out", str(tmp_path / "o")]) == 3

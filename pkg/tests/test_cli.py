import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from qfdt.cli import main
from qfdt.exceptions import ScenarioError
from qfdt.runner import run
from qfdt.scenario import load_scenario, parse_scenario

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"

MINIMAL = """\
schema_version: 1
name: minimal
model: {kind: two-level}
ensemble: {kind: canonical, beta: 1.0}
tasks:
  - type: identity-suite
    identities: [table1]
"""


def write(tmp_path, text, name="s.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_scenario_defaults(tmp_path):
    scn = load_scenario(write(tmp_path, MINIMAL))
    assert scn.tolerances.atol == 1e-8 and scn.tolerances.rtol == 1e-6 and scn.tolerances.fd_step == 1e-5
    assert scn.quad_tol == 1e-9
    assert len(scn.grid_points()) == 1


def test_grid_count():
    scn = load_scenario(SCENARIOS / "two-level-canonical.yaml")
    assert len(scn.grid_points()) == 15


def test_all_table1_pass_on_two_level(tmp_path):
    rep = run(load_scenario(write(tmp_path, MINIMAL)))
    t1 = [it for it in rep.items if it.identity_id.startswith("T1-")]
    assert len(t1) == 4 and all(it.status == "pass" for it in t1)


def test_parse_error_has_position(tmp_path):
    p = write(tmp_path, "schema_version: 1\nname: [unclosed\n")
    with pytest.raises(ScenarioError, match=r"line \d+, column \d+"):
        load_scenario(p)


@pytest.mark.parametrize("mutate, field", [
    (lambda s: s.replace("two-level}", "two-level}\nextra: 1"), "extra"),
    (lambda s: s.replace("kind: two-level", "kind: hubbard"), "model.kind"),
    (lambda s: s.replace("beta: 1.0", "beta: -1.0"), "ensemble.beta"),
    (lambda s: s.replace("beta: 1.0", "beta: 1.0, mu: 0.3"), "ensemble.mu"),
    (lambda s: s.replace("identity-suite", "fly"), "tasks[0].type"),
    (lambda s: s.replace("[table1]", "[T1-NOPE]"), "tasks[0].identities"),
    (lambda s: s.replace("schema_version: 1", "schema_version: 7"), "schema_version"),
])
def test_semantic_errors_name_the_field(mutate, field):
    with pytest.raises(ScenarioError, match=field.replace("[", r"\[").replace("]", r"\]")):
        parse_scenario(yaml.safe_load(mutate(MINIMAL)))


def test_grand_canonical_requires_number_operator(tmp_path):
    text = MINIMAL.replace("[table1]", "[table2]")
    with pytest.raises(ScenarioError, match="grand-canonical requires number operator"):
        load_scenario(write(tmp_path, text))
    text = MINIMAL.replace("kind: canonical", "kind: grand-canonical")
    with pytest.raises(ScenarioError, match="grand-canonical requires number operator"):
        load_scenario(write(tmp_path, text))


def test_empty_task_list_exits_zero(tmp_path, capsys):
    p = write(tmp_path, MINIMAL.split("tasks:")[0] + "tasks: []\n")
    assert main(["run", str(p), "--output", str(tmp_path / "out")]) == 0
    data = json.loads((tmp_path / "out" / "report.json").read_text())
    assert data["counts"] == {"attempted": 0, "passed": 0, "failed": 0, "errors": 0}


def test_run_writes_reports(tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(SCENARIOS / "two-level-canonical.yaml"), "--output", str(out)]) == 0
    data = json.loads((out / "report.json").read_text())
    c = data["counts"]
    assert c["attempted"] == c["passed"] + c["failed"] + c["errors"] == len(data["items"])
    with open(out / "identities.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == c["attempted"]
    assert {"identity_id", "beta", "mu", "lambda", "lhs", "rhs", "abs_residual", "rel_residual", "pass"} <= set(rows[0])


def test_dynamics_trajectory_csv(tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(SCENARIOS / "precession.yaml"), "--output", str(out)]) == 0
    with open(out / "trajectory.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6284
    assert rows[0]["lhs"] == "" and float(rows[1]["residual"]) < 1e-8


def test_negative_control_exits_nonzero(tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(SCENARIOS / "negative-control.yaml"), "--output", str(out)]) == 1
    data = json.loads((out / "report.json").read_text())
    bad = [it for it in data["items"] if it["status"] == "fail"]
    assert [it["identity_id"] for it in bad] == ["T1-H-BETA"]


def test_fail_soft_counts_errors(tmp_path):
    # X does not commute with the canonical state: every generic check on it errors
    text = MINIMAL.replace("    identities: [table1]", "    identities: [T1-ONE-BETA]\n    observables: [X]")
    p = write(tmp_path, text)
    rep = run(load_scenario(p))
    c = rep.counts()
    assert c["errors"] == 2 and c["attempted"] == c["passed"] + c["failed"] + c["errors"]
    assert main(["run", str(p), "--output", str(tmp_path / "o")]) == 1


def test_fail_fast_stops_early(tmp_path):
    text = (SCENARIOS / "negative-control.yaml").read_text().replace("beta: [1.0]", "beta: [1.0, 2.0, 3.0]")
    p = write(tmp_path, text)
    rep = run(load_scenario(p), fail_fast=True)
    assert rep.aborted and len(rep.items) == 2


def test_determinism_across_threads(tmp_path):
    scn = load_scenario(SCENARIOS / "fermions-grand-canonical.yaml")
    a = run(scn, threads=1).to_dict()
    b = run(scn, threads=4).to_dict()
    for d in (a, b):
        d.pop("started_at")
        d.pop("wall_time_s")
    assert a == b


def test_flag_overrides(tmp_path):
    out = tmp_path / "out"
    main(["run", str(SCENARIOS / "negative-control.yaml"), "--output", str(out), "--atol", "1.0", "--seed", "9"])
    data = json.loads((out / "report.json").read_text())
    assert data["tolerances"]["atol"] == 1.0 and data["seed"] == 9
    assert data["all_passed"]


def test_validate_and_list(capsys):
    assert main(["validate", str(SCENARIOS / "two-level-canonical.yaml")]) == 0
    assert "15 ensemble builds scheduled" in capsys.readouterr().out
    assert main(["list-identities"]) == 0
    out = capsys.readouterr().out
    assert "T2-N-MU" in out and "Var(N)" in out


def test_validate_invalid_exit_code(tmp_path, capsys):
    p = write(tmp_path, MINIMAL.replace("two-level", "nope"))
    assert main(["validate", str(p)]) == 2
    assert "model.kind" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "qfdt", "list-identities"], capture_output=True, text=True)
    assert r.returncode == 0 and "T1-H-BETA" in r.stdout

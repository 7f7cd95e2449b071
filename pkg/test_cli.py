import csv
import json
import textwrap

import pytest

from cli import main

QUAD = textwrap.dedent("""\
    [design_space]
    lo = -1
    hi = 1
    grid_n = 101

    [model1]
    mean = p1 + p2*x + p3*x^2
    theta = 0, 0, 1

    [model2]
    mean = p1 + p2*x
    box = -10:10, -10:10

    [density1]
    kind = truncated_normal
    variance = 1
    half_width = 3

    [criterion]
    tag = T

    [inner]
    n_starts = 8
""")

OPTIMAL = "--design=-1:0.25,0:0.5,1:0.25"
UNIFORM = "--design=-1:0.3333333333333333,0:0.3333333333333333,1:0.3333333333333334"


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "quad.ini"
    path.write_text(QUAD)
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ─── verify / sensitivity ─────────────────────────────────────────────────────


def test_verify_exit_codes(config, capsys):
    assert main(["verify", config, OPTIMAL]) == 0
    assert "OPTIMAL" in capsys.readouterr().out
    assert main(["verify", config, UNIFORM]) == 3
    assert "NOT_OPTIMAL" in capsys.readouterr().out


def test_verify_writes_csv(config, tmp_path):
    out = tmp_path / "psi.csv"
    assert main(["verify", config, OPTIMAL, "--grid-n", "21", "--csv", str(out)]) == 0
    assert len(_rows(out)) == 22


def test_sensitivity_csv(config, tmp_path):
    out = tmp_path / "psi.csv"
    assert main(["sensitivity", config, UNIFORM, "--grid-n", "51", "--csv", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == ["x", "psi"] and len(rows) == 52
    assert float(rows[26][0]) == pytest.approx(0.0, abs=1e-12)
    assert float(rows[26][1]) == pytest.approx(2 / 9, abs=1e-6)


# ─── Input errors ─────────────────────────────────────────────────────────────


def test_malformed_design_is_an_input_error(config, capsys):
    assert main(["verify", config, "--design=1:2:3"]) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_design_outside_space(config):
    assert main(["verify", config, "--design=-1:0.5,2:0.5"]) == 1


def test_bad_config(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text(QUAD.replace("hi = 1", "hi = -1"))
    assert main(["verify", str(path), OPTIMAL]) == 1
    assert main(["verify", str(tmp_path / "missing.ini"), OPTIMAL]) == 1


def test_infinite_box_is_a_config_error(tmp_path):
    path = tmp_path / "inf.ini"
    path.write_text(QUAD.replace("box = -10:10, -10:10", "box = -inf:10, -10:10"))
    assert main(["verify", str(path), OPTIMAL]) == 1


def test_criterion_needs_density(config):
    assert main(["verify", config, OPTIMAL, "--criterion", "SKL_B"]) == 1
    assert main(["verify", config, OPTIMAL, "--criterion", "D"]) == 1


# ─── solve ────────────────────────────────────────────────────────────────────


def test_solve_round_trip_is_deterministic(config, tmp_path):
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["solve", config, "-o", str(first), "--n", "20", "--tol", "1e-3"]) == 0
    assert main(["solve", config, "-o", str(second), "--tol", "1e-3"]) == 0

    a, b = json.loads(first.read_text()), json.loads(second.read_text())
    assert a["points"] == pytest.approx([-1.0, 0.0, 1.0], abs=1e-3)
    assert a["weights"] == pytest.approx([0.25, 0.5, 0.25], abs=1e-3)
    assert a["rounding"] == {"n": 20, "counts": [5, 10, 5]}
    assert a["verification"]["verdict"] == "OPTIMAL"
    assert a["criterion"] == "T"
    for key in ("points", "weights", "value", "theta2_star"):
        assert a[key] == b[key]

    assert main(["verify", config, "--design", str(first), "--tol", "1e-3"]) == 0


# ─── efficiency ───────────────────────────────────────────────────────────────


def test_efficiency_of_identical_designs(config, tmp_path):
    out = tmp_path / "eff.json"
    d = "0:0.5,-1:0.25,1:0.25"
    assert main(["efficiency", config, "--designs", d, d, "--criteria", "T", "-o", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["criteria"] == ["T"]
    assert doc["designs"] == ["#1", "#2"]
    assert doc["efficiency"] == [[1.0, 1.0]]


def test_efficiency_uses_tagged_reference(config, tmp_path):
    best = tmp_path / "best.json"
    best.write_text(json.dumps({"points": [-1, 0, 1], "weights": [0.25, 0.5, 0.25], "criterion": "T"}))
    out = tmp_path / "eff.json"
    worse = "0:0.8,-1:0.1,1:0.1"
    assert main(["efficiency", config, "--designs", worse, str(best), "--criteria", "T", "-o", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["designs"] == ["#1", "T"]
    low, one = doc["efficiency"][0]
    assert one == 1.0 and 0 < low < 1


# ─── densities / lambda-curve ─────────────────────────────────────────────────


def test_densities_csv(config, tmp_path):
    out = tmp_path / "dens.csv"
    code = main(["densities", config, OPTIMAL, "--criterion", "SKL_A", "--theta2", "0.5,0",
                 "--n-y", "11", "--csv", str(out)])
    assert code == 0
    rows = _rows(out)
    assert rows[0] == ["x", "y", "f_given", "f_optimal", "eta1", "eta2", "lambda"]
    assert len(rows) == 1 + 3 * 11


def test_densities_need_semi_parametric_criterion(config, tmp_path):
    assert main(["densities", config, OPTIMAL, "--theta2", "0.5,0", "--csv", str(tmp_path / "d.csv")]) == 1


def test_lambda_curve(config, tmp_path, capsys):
    out = tmp_path / "lam.csv"
    assert main(["lambda-curve", config, "--x", "0", "--offsets=-0.4,0.4", "--csv", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == ["eta2", "lambda", "value"]
    assert float(rows[1][0]) == pytest.approx(-0.4) and float(rows[1][1]) > 0
    assert float(rows[2][1]) < 0
    assert "2/2 feasible" in capsys.readouterr().out

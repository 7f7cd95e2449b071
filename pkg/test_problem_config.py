import json
import textwrap

import pytest

from criteria import CriterionKind
from errors import ConfigError
from models import DensityKind, DesignSpace
from problem_config import load_config, parse_config, read_design
from quadrature import Interval

BASE = textwrap.dedent("""\
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

    [criterion]
    tag = T

    [inner]
    n_starts = 8
""")

DENSITIES = textwrap.dedent("""\

    [density1]
    kind = TruncatedNormal
    variance = 1
    half_width = 3

    [density2]
    kind = normal
    variance = 0.5

    [density2:SKL_B]
    kind = normal
    variance = 2
""")


# ─── Problem configs ──────────────────────────────────────────────────────────


def test_parse_valid_config():
    cfg = parse_config(BASE)
    assert cfg.kind is CriterionKind.T
    problem = cfg.problem()
    assert problem.space.domain.as_tuple() == (-1.0, 1.0)
    assert problem.model2.theta_dim == 2
    assert problem.theta1 == (0.0, 0.0, 1.0)
    assert cfg.optimizer_config().grid_n == 101
    assert cfg.inner_config().n_starts == 8


def test_per_criterion_density_override():
    cfg = parse_config(BASE + DENSITIES)
    assert cfg.problem(CriterionKind.KLNORMAL).density2.variance_at(0.0, ()) == 0.5
    assert cfg.problem(CriterionKind.SKL_B).density2.variance_at(0.0, ()) == 2.0
    assert cfg.problem(CriterionKind.SKL_A).density1.kind is DensityKind.TRUNCATED_NORMAL


def test_criterion_override_needs_densities():
    assert parse_config(BASE + DENSITIES, criterion="skl_a").kind is CriterionKind.SKL_A
    with pytest.raises(ConfigError) as info:
        parse_config(BASE, criterion="KLNORMAL")
    assert info.value.field == "density2"


def test_lo_not_below_hi_reports_section_line():
    with pytest.raises(ConfigError) as info:
        parse_config(BASE.replace("hi = 1", "hi = -1"))
    assert info.value.line == 1
    assert "lo must be < hi" in str(info.value)


def test_bad_value_reports_key_line():
    with pytest.raises(ConfigError) as info:
        parse_config(BASE.replace("grid_n = 101", "grid_n = many"))
    assert info.value.line == 4
    assert info.value.field == "design_space.grid_n"


def test_malformed_line():
    with pytest.raises(ConfigError) as info:
        parse_config(BASE.replace("[criterion]\n", "[criterion]\nthis is not a key\n"))
    assert info.value.line is not None


def test_unknown_section():
    with pytest.raises(ConfigError) as info:
        parse_config(BASE + "\n[plotting]\ncolour = red\n")
    assert "plotting" in str(info.value)
    assert info.value.line == BASE.count("\n") + 2


@pytest.mark.parametrize(
    "old, new, field",
    [
        ("mean = p1 + p2*x\n", "mean = p1 + *x\n", "model2.mean"),
        ("theta = 0, 0, 1", "theta = 0, 1", "model1.theta"),
        ("box = -10:10, -10:10", "box = -10:10", "model2.box"),
    ],
)
def test_model_errors(old, new, field):
    with pytest.raises(ConfigError) as info:
        parse_config(BASE.replace(old, new))
    assert info.value.field == field


@pytest.mark.parametrize("box", ["-10:10, 5", "-10:10, 3:-3"])
def test_box_syntax(box):
    with pytest.raises(ConfigError):
        parse_config(BASE.replace("box = -10:10, -10:10", f"box = {box}"))


@pytest.mark.parametrize("old, new, field", [
    ("box = -10:10, -10:10", "box = -inf:10, -10:10", "model2.box"),
    ("lo = -1\n", "lo = -inf\n", "design_space"),
])
def test_infinite_bounds_are_config_errors(old, new, field):
    with pytest.raises(ConfigError) as info:
        parse_config(BASE.replace(old, new))
    assert info.value.field.startswith(field)


def test_truncation_settings_checked():
    bad = DENSITIES.replace("half_width = 3\n", "")
    with pytest.raises(ConfigError):
        parse_config(BASE + bad)


def test_unknown_criterion_tag():
    with pytest.raises(ConfigError):
        parse_config(BASE.replace("tag = T", "tag = D"))


def test_load_config(tmp_path):
    path = tmp_path / "quad.ini"
    path.write_text(BASE)
    assert load_config(path).source == str(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")


# ─── Designs ──────────────────────────────────────────────────────────────────


SPACE = DesignSpace(Interval(-1.0, 1.0))


def test_design_from_pairs():
    d, meta = read_design("-1:0.25, 0:0.5, 1:0.25", SPACE)
    assert d.points == (-1.0, 0.0, 1.0)
    assert d.weights == (0.25, 0.5, 0.25)


def test_design_from_json_literal():
    d, meta = read_design('{"points": [1, -1], "weights": [0.5, 0.5], "criterion": "T"}', SPACE)
    assert d.points == (-1.0, 1.0)
    assert meta == {"criterion": "T"}


def test_design_from_result_file(tmp_path):
    path = tmp_path / "t.json"
    path.write_text(json.dumps({"points": [-1, 0, 1], "weights": [0.25, 0.5, 0.25],
                                "criterion": "SKL_A", "value": 0.1}))
    d, meta = read_design(str(path), SPACE)
    assert d.size == 3
    assert meta["criterion"] == "SKL_A" and meta["value"] == 0.1


def test_nested_design_document():
    d, meta = read_design('{"design": {"points": [0.5], "weights": [1]}, "criterion": "KL"}')
    assert d.points == (0.5,) and meta == {"criterion": "KL"}


@pytest.mark.parametrize("spec", ["1:2:3", "0.5", '{"points": [0.1]}', "{not json", "a:b", "2:1"])
def test_malformed_design(spec):
    with pytest.raises(ConfigError):
        read_design(spec, SPACE)

import math

import numpy as np
import pytest
from scipy.special import ndtri

from errors import ArityError, DomainError, InvalidVariance, OutOfSupport, ParseError, UnboundedSupport
from models import (
    BinOp,
    Call,
    DensityFamily,
    DensityKind,
    DesignSpace,
    ModelSpec,
    Neg,
    Num,
    Param,
    Var,
    density,
    normal_quantile,
    parse_mean,
    support,
    to_source,
)
from quadrature import Interval, integrate


# ─── Expression parser ────────────────────────────────────────────────────────


@pytest.mark.parametrize(
    "source, expected",
    [
        ("1 + 2*3", 7.0),
        ("(1 + 2)*3", 9.0),
        ("2^3^2", 512.0),
        ("-2^2", -4.0),
        ("8/4/2", 1.0),
        ("1 - -1", 2.0),
        ("sqrt(16) + log(exp(2))", 6.0),
    ],
)
def test_precedence(source, expected):
    assert parse_mean(source)(0.0) == pytest.approx(expected, abs=1e-15)


def test_rational_model():
    m = parse_mean("p1*x + p2*x/(x + p3)")
    assert m.arity == 3
    assert m(1.0, (1, 1, 1)) == pytest.approx(1.5)
    xs = np.linspace(0.1, 5, 7)
    assert m(xs, (1, 1, 1)) == pytest.approx(xs + xs / (xs + 1))


def test_constant_broadcasts_over_x():
    out = parse_mean("0.1")(np.zeros(4))
    assert out.shape == (4,) and np.all(out == 0.1)


def test_to_source_reparses_to_same_ast():
    for src in ["p1 + p2*exp(x) + p3*exp(-x)", "p1*(1 - exp(-p2*x))", "-(x - 2)^-1", "p1*x/(p2 + x)"]:
        m = parse_mean(src)
        assert parse_mean(m.to_source()).ast == m.ast



def _random_tree(rng, depth):
    if depth == 0 or rng.random() < 0.25:
        pick = rng.integers(3)
        if pick == 0:
            return Num(float(np.round(rng.uniform(0.0, 10.0), int(rng.integers(0, 4)))))
        return Var() if pick == 1 else Param(1)
    pick = rng.integers(6)
    if pick == 0:
        return Neg(_random_tree(rng, depth - 1))
    if pick == 1:
        return Call(str(rng.choice(["exp", "log", "sqrt"])), _random_tree(rng, depth - 1))
    op = str(rng.choice(["+", "-", "*", "/", "^"]))
    return BinOp(op, _random_tree(rng, depth - 1), _random_tree(rng, depth - 1))


def _reference_eval(node, x, theta):
    if isinstance(node, Num):
        return np.full_like(x, node.value)
    if isinstance(node, Var):
        return x
    if isinstance(node, Param):
        return np.full_like(x, theta[node.index - 1])
    if isinstance(node, Neg):
        return -_reference_eval(node.operand, x, theta)
    if isinstance(node, Call):
        return {"exp": np.exp, "log": np.log, "sqrt": np.sqrt}[node.func](_reference_eval(node.arg, x, theta))
    ops = {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide, "^": np.power}
    return ops[node.op](_reference_eval(node.left, x, theta), _reference_eval(node.right, x, theta))


def test_random_trees_print_parse_evaluate():
    rng = np.random.default_rng(11)
    x = np.linspace(-2.0, 2.0, 9)
    theta = (0.7,)
    for _ in range(100):
        # p1 always present so the arity check passes
        tree = BinOp("+", _random_tree(rng, 4), BinOp("*", Num(0.0), Param(1)))
        m = parse_mean(to_source(tree))
        assert m.ast == tree
        with np.errstate(all="ignore"):
            got = m(x, theta)
            want = _reference_eval(tree, x, theta)
        np.testing.assert_allclose(got, want, rtol=1e-12, equal_nan=True)

@pytest.mark.parametrize("source, offset", [("p1 *", 4), ("sin(x)", 0), ("x + $", 4), ("(x", 2), ("x)", 1)])
def test_parse_errors_carry_offset(source, offset):
    with pytest.raises(ParseError) as info:
        parse_mean(source)
    assert info.value.offset == offset
    assert info.value.expected


def test_empty_expression():
    with pytest.raises(ParseError):
        parse_mean("   ")


@pytest.mark.parametrize("source", ["p1 + p3*x", "p0*x"])
def test_parameter_numbering(source):
    with pytest.raises(ArityError):
        parse_mean(source)


def test_too_few_parameters():
    with pytest.raises(ArityError):
        parse_mean("p1 + p2*x")(0.5, (1.0,))


def test_model_spec_arity():
    mean = parse_mean("p1*x/(x + p2)")
    spec = ModelSpec(mean, 2, (Interval(0.1, 100), Interval(0.1, 100)))
    assert spec.contains((1.0, 1.0)) and not spec.contains((0.0, 1.0))
    with pytest.raises(ArityError):
        ModelSpec(mean, 3, (Interval(0, 1),) * 3)
    with pytest.raises(ArityError):
        ModelSpec(mean, 2, (Interval(0, 1),))


def test_design_space_grid():
    space = DesignSpace(Interval(-1, 1), grid_n=5)
    assert space.grid() == pytest.approx([-1, -0.5, 0, 0.5, 1])
    assert space.grid(2001)[[0, -1]] == pytest.approx([-1, 1])


# ─── Densities ────────────────────────────────────────────────────────────────


def test_truncated_normal_is_normalised():
    fam = DensityFamily(DensityKind.TRUNCATED_NORMAL, parse_mean("1"), half_width=3.0)
    pd = fam.at(0.5, (2.0,), parse_mean("p1*x"))
    assert pd.support.as_tuple() == pytest.approx((-2.0, 4.0))
    assert integrate(pd.pdf, pd.support) == pytest.approx(1.0, abs=1e-12)
    mean = integrate(lambda y: y * pd.pdf(y), pd.support)
    assert mean == pytest.approx(1.0, abs=1e-12)


def test_truncated_lognormal_support_and_mass():
    fam = DensityFamily(DensityKind.TRUNCATED_LOGNORMAL, parse_mean("0.1"), quantiles=(0.0001, 0.9999))
    pd = fam.at_eta(1.5, 0.1)
    assert math.exp(pd.mu + 0.5 * pd.sigma ** 2) == pytest.approx(1.5)
    assert pd.mass == pytest.approx(0.9998, abs=1e-12)
    lo, hi = pd.support.as_tuple()
    assert lo == pytest.approx(math.exp(pd.mu + pd.sigma * ndtri(0.0001)), rel=1e-12)
    assert hi == pytest.approx(math.exp(pd.mu + pd.sigma * ndtri(0.9999)), rel=1e-12)
    assert integrate(pd.pdf, pd.support) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("kind, extra", [
    (DensityKind.TRUNCATED_NORMAL, {"half_width": 3.0}),
    (DensityKind.TRUNCATED_LOGNORMAL, {"quantiles": (0.0001, 0.9999)}),
])
def test_truncated_densities_integrate_to_one_at_random_draws(kind, extra):
    rng = np.random.default_rng(5)
    fam = DensityFamily(kind, parse_mean("0.05 + 0.1*x^2"), **extra)
    mean = parse_mean("p1 + p2*x")
    for _ in range(50):
        x = rng.uniform(-1.0, 1.0)
        theta = (rng.uniform(1.0, 2.0), rng.uniform(-0.5, 0.5))
        pd = fam.at(x, theta, mean)
        assert integrate(pd.pdf, pd.support) == pytest.approx(1.0, abs=1e-10)


def test_lognormal_needs_positive_mean():
    fam = DensityFamily(DensityKind.LOGNORMAL, parse_mean("0.1"))
    with pytest.raises(DomainError):
        fam.at_eta(-0.2, 0.1)


def test_variance_must_be_positive():
    fam = DensityFamily(DensityKind.NORMAL, parse_mean("p1 - 1"))
    with pytest.raises(InvalidVariance):
        fam.at(0.0, (1.0,), parse_mean("p1"))


def test_support_and_density_operations():
    mean = parse_mean("x")
    bounded = DensityFamily(DensityKind.TRUNCATED_NORMAL, parse_mean("1"), half_width=2.0)
    assert support(bounded, 1.0, (), mean).as_tuple() == (-1.0, 3.0)
    assert density(bounded, 1.0, 1.0, (), mean) > density(bounded, 2.5, 1.0, (), mean)
    with pytest.raises(OutOfSupport):
        density(bounded, 3.5, 1.0, (), mean)
    with pytest.raises(UnboundedSupport):
        support(DensityFamily(DensityKind.NORMAL, parse_mean("1")), 1.0, (), mean)


def test_truncation_settings_are_required():
    with pytest.raises(ValueError):
        DensityFamily(DensityKind.TRUNCATED_NORMAL, parse_mean("1"))
    with pytest.raises(ValueError):
        DensityFamily(DensityKind.TRUNCATED_LOGNORMAL, parse_mean("1"), quantiles=(0.9, 0.1))


# ─── Normal quantile ──────────────────────────────────────────────────────────


@pytest.mark.parametrize("p", [1e-12, 1e-4, 0.02, 0.02425, 0.2, 0.5, 0.75, 0.9999, 0.999999])
def test_normal_quantile_matches_scipy(p):
    assert normal_quantile(p) == pytest.approx(float(ndtri(p)), abs=1e-9, rel=1e-12)


def test_normal_quantile_symmetry():
    for p in (0.001, 0.1, 0.3):
        assert normal_quantile(1 - p) == pytest.approx(-normal_quantile(p), abs=1e-12)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_normal_quantile_domain(p):
    with pytest.raises(DomainError):
        normal_quantile(p)

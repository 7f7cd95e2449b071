import numpy as np
import pytest

from criteria import (
    CriterionKind,
    Design,
    DiscriminationProblem,
    InnerConfig,
    contributions,
    efficiency,
    eval_at_theta2,
    inner_minimize,
    least_favorable_curves,
    point_divergence,
    round_design,
)
from errors import ConfigError, InnerNonConvergent, NonUniqueMinimum, ZeroReference
from models import DensityFamily, DensityKind, DesignSpace, ModelSpec, parse_mean
from quadrature import Interval

FAST = InnerConfig(n_starts=8)


def _quadratic_vs_linear(**densities) -> DiscriminationProblem:
    return DiscriminationProblem(
        mean1=parse_mean("p1 + p2*x + p3*x^2"),
        theta1=(0.0, 0.0, 1.0),
        model2=ModelSpec(parse_mean("p1 + p2*x"), 2, (Interval(-10, 10), Interval(-10, 10))),
        space=DesignSpace(Interval(-1.0, 1.0)),
        **densities,
    )


def _constant_truth(mean2: str, box: Interval, **densities) -> DiscriminationProblem:
    return DiscriminationProblem(
        mean1=parse_mean("1"),
        theta1=(),
        model2=ModelSpec(parse_mean(mean2), 1, (box,)),
        space=DesignSpace(Interval(-1.0, 1.0)),
        **densities,
    )


NORMAL_HALF = DensityFamily(DensityKind.NORMAL, parse_mean("0.5"))
DESIGN = Design.from_arrays([-1.0, 0.0, 1.0], [0.25, 0.5, 0.25])


# ─── Criterion tags ───────────────────────────────────────────────────────────


@pytest.mark.parametrize("tag, kind", [("T", CriterionKind.T), ("skl_a", CriterionKind.SKL_A),
                                       (" KLNormal ", CriterionKind.KLNORMAL)])
def test_parse_criterion(tag, kind):
    assert CriterionKind.parse(tag) is kind


def test_parse_unknown_criterion():
    with pytest.raises(ConfigError) as info:
        CriterionKind.parse("D")
    assert "SKL_B" in str(info.value)


# ─── Designs ──────────────────────────────────────────────────────────────────


def test_design_validation():
    with pytest.raises(ConfigError):
        Design((0.5, 0.1), (0.5, 0.5))
    with pytest.raises(ConfigError):
        Design((0.1, 0.5), (0.5, 0.4))
    with pytest.raises(ConfigError):
        Design((0.1, 0.5), (1.0, 0.0))


def test_from_arrays_sorts_and_merges():
    d = Design.from_arrays([1.0, 0.0, 1.0], [0.2, 0.5, 0.3])
    assert d.points == (0.0, 1.0)
    assert d.weights == pytest.approx((0.5, 0.5))


def test_from_user_renormalises_small_drift():
    d = Design.from_user([0.0, 1.0], [0.5, 0.5 + 5e-7])
    assert sum(d.weights) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize(
    "points, weights",
    [([0.0, 1.0], [0.5, 0.51]), ([0.0, 0.0], [0.5, 0.5]), ([0.0, 2.0], [0.5, 0.5]), ([0.0], [-1.0])],
)
def test_from_user_rejects(points, weights):
    with pytest.raises(ConfigError):
        Design.from_user(points, weights, DesignSpace(Interval(-1.0, 1.0)))


def test_mix_collapse_drop():
    d = Design.from_arrays([0.0, 1.0], [0.5, 0.5]).mix(0.5, 0.2)
    assert d.points == (0.0, 0.5, 1.0)
    assert d.weights == pytest.approx((0.4, 0.2, 0.4))

    c = Design.from_arrays([0.0, 0.05, 1.0], [0.25, 0.25, 0.5]).collapse(0.1)
    assert c.points == pytest.approx((0.025, 1.0))
    assert c.weights == pytest.approx((0.5, 0.5))

    assert Design.from_arrays([0.0, 1.0], [0.05, 0.95]).drop(0.1).points == (1.0,)
    assert Design.from_arrays([0.0, 1.0], [0.05, 0.95]).drop(0.99).points == (1.0,)


def test_round_design():
    assert round_design(DESIGN, 10) == [3, 5, 2]
    assert sum(round_design(Design.uniform([0.0, 0.3, 0.6]), 20)) == 20
    with pytest.raises(ConfigError):
        round_design(DESIGN, 0)


# ─── Point divergences ────────────────────────────────────────────────────────


def test_klnormal_is_t_over_variance():
    problem = _quadratic_vs_linear(density2=NORMAL_HALF)
    xs = np.linspace(-1, 1, 9)
    theta = (0.3, -0.2)
    t = contributions(CriterionKind.T, problem, xs, theta)
    kln = contributions(CriterionKind.KLNORMAL, problem, xs, theta)
    assert kln == pytest.approx(t / 0.5, rel=1e-14)


def test_skl_b_is_half_klnormal_for_normal_f2():
    problem = _quadratic_vs_linear(density2=NORMAL_HALF)
    theta = (0.4, 0.1)
    for x in np.linspace(-1, 1, 7):
        b = point_divergence(CriterionKind.SKL_B, problem, float(x), theta).value
        kln = point_divergence(CriterionKind.KLNORMAL, problem, float(x), theta).value
        assert b == pytest.approx(0.5 * kln, abs=1e-15)


def test_kl_between_equal_variance_normals():
    problem = _quadratic_vs_linear(density1=NORMAL_HALF, density2=NORMAL_HALF)
    theta = (0.4, 0.1)
    kl = contributions(CriterionKind.KL, problem, [-0.5, 0.2, 0.9], theta)
    kln = contributions(CriterionKind.KLNORMAL, problem, [-0.5, 0.2, 0.9], theta)
    assert kl == pytest.approx(0.5 * kln, rel=1e-12)


def test_eval_at_theta2_is_weighted_sum():
    problem = _quadratic_vs_linear()
    value = eval_at_theta2(CriterionKind.T, DESIGN, problem, (0.5, 0.0))
    assert value == pytest.approx(0.25, abs=1e-15)


@pytest.mark.parametrize("first, second", [
    ([-1.0, 0.0], [0.5, 1.0]),
    ([-1.0, 1.0], [0.0]),
    ([-0.8, -0.2, 0.4], [-1.0, 0.0, 1.0]),
])
def test_t_criterion_is_concave_in_the_design(first, second):
    problem = _quadratic_vs_linear()
    xi1, xi2 = Design.uniform(first), Design.uniform(second)
    p1, w1 = xi1.as_arrays()
    p2, w2 = xi2.as_arrays()
    mixed = Design.from_arrays(np.concatenate([p1, p2]), np.concatenate([0.5 * w1, 0.5 * w2]))
    k1 = inner_minimize(CriterionKind.T, xi1, problem).value
    k2 = inner_minimize(CriterionKind.T, xi2, problem).value
    k_mix = inner_minimize(CriterionKind.T, mixed, problem).value
    assert k_mix >= 0.5 * (k1 + k2) - 1e-9


# ─── Inner minimisation ───────────────────────────────────────────────────────


def test_t_inner_minimum():
    report = inner_minimize(CriterionKind.T, DESIGN, _quadratic_vs_linear())
    assert report.value == pytest.approx(0.25, abs=1e-8)
    assert report.theta2_star == pytest.approx((0.5, 0.0), abs=1e-4)
    assert report.point_contributions == pytest.approx((0.25, 0.25, 0.25), abs=1e-6)
    assert report.summary()["starts"] == len(report.inner_multistart_trace)


def test_skl_b_inner_is_half_klnormal_inner():
    problem = _quadratic_vs_linear(density2=NORMAL_HALF)
    b = inner_minimize(CriterionKind.SKL_B, DESIGN, problem, FAST)
    kln = inner_minimize(CriterionKind.KLNORMAL, DESIGN, problem, FAST)
    assert b.value == pytest.approx(0.5 * kln.value, rel=1e-6)
    assert kln.value == pytest.approx(0.25 / 0.5, rel=1e-6)


def test_warm_start_only():
    report = inner_minimize(CriterionKind.T, DESIGN, _quadratic_vs_linear(), warm_start=(0.4, 0.1),
                            multistart=False)
    assert len(report.inner_multistart_trace) == 1
    assert report.value == pytest.approx(0.25, abs=1e-8)


def test_warm_start_reproduces_multistart_value():
    problem = _quadratic_vs_linear(density2=NORMAL_HALF)
    for kind in (CriterionKind.T, CriterionKind.KLNORMAL):
        full = inner_minimize(kind, DESIGN, problem, FAST)
        warm = inner_minimize(kind, DESIGN, problem, FAST, warm_start=full.theta2_star, multistart=False)
        assert warm.value == pytest.approx(full.value, abs=1e-8)


def test_unconverged_starts_are_qualified():
    starved = InnerConfig(n_starts=2, maxfev_per_dim=1)
    report = inner_minimize(CriterionKind.T, DESIGN, _quadratic_vs_linear(), starved)
    assert not any(s.converged for s in report.inner_multistart_trace)
    assert "inner-not-converged" in report.qualifiers
    converged = inner_minimize(CriterionKind.T, DESIGN, _quadratic_vs_linear(), FAST)
    assert "inner-not-converged" not in converged.qualifiers


def test_non_unique_minimum_warns():
    problem = _constant_truth("p1^2", Interval(-2.0, 2.0))
    with pytest.warns(NonUniqueMinimum):
        report = inner_minimize(CriterionKind.T, Design.uniform([-0.5, 0.5]), problem)
    assert "non-unique-theta2" in report.qualifiers
    assert report.value == pytest.approx(0.0, abs=1e-10)


def test_infeasible_everywhere_raises():
    f1 = DensityFamily(DensityKind.TRUNCATED_NORMAL, parse_mean("1"), half_width=1.0)
    problem = DiscriminationProblem(
        mean1=parse_mean("0"),
        theta1=(),
        model2=ModelSpec(parse_mean("p1"), 1, (Interval(5.0, 6.0),)),
        space=DesignSpace(Interval(-1.0, 1.0)),
        density1=f1,
    )
    with pytest.raises(InnerNonConvergent):
        inner_minimize(CriterionKind.SKL_A, Design.uniform([0.0]), problem, FAST)


def test_require_checks_densities():
    problem = _quadratic_vs_linear(density2=NORMAL_HALF)
    with pytest.raises(ConfigError):
        problem.require(CriterionKind.KL)
    with pytest.raises(ConfigError):
        _quadratic_vs_linear(density1=NORMAL_HALF).require(CriterionKind.SKL_A)
    with pytest.raises(ConfigError):
        _quadratic_vs_linear().require(CriterionKind.SKL_B)


def test_theta1_arity_checked():
    with pytest.raises(ConfigError):
        DiscriminationProblem(
            mean1=parse_mean("p1 + p2*x"),
            theta1=(1.0,),
            model2=ModelSpec(parse_mean("p1"), 1, (Interval(0, 1),)),
            space=DesignSpace(Interval(0.0, 1.0)),
        )


# ─── Efficiency ───────────────────────────────────────────────────────────────


def test_self_efficiency_is_one():
    problem = _quadratic_vs_linear()
    assert efficiency(CriterionKind.T, DESIGN, DESIGN, problem, FAST) == pytest.approx(1.0, abs=1e-9)


def test_efficiency_is_a_ratio():
    problem = _quadratic_vs_linear()
    worse = Design.from_arrays([-1.0, 0.0, 1.0], [0.1, 0.8, 0.1])
    eff = efficiency(CriterionKind.T, worse, DESIGN, problem, FAST)
    assert 0 < eff < 1


@pytest.mark.filterwarnings("ignore:.*inner minimum is not unique")
def test_zero_reference():
    # a rival that reproduces the true mean for every θ₂
    problem = _constant_truth("1 + 0*p1", Interval(0.0, 1.0))
    with pytest.raises(ZeroReference):
        efficiency(CriterionKind.T, DESIGN, DESIGN, problem, FAST)


# ─── Least-favourable curves ──────────────────────────────────────────────────


def test_least_favorable_curves_for_skl_a():
    f1 = DensityFamily(DensityKind.TRUNCATED_NORMAL, parse_mean("1"), half_width=3.0)
    problem = _quadratic_vs_linear(density1=f1)
    rows = least_favorable_curves(CriterionKind.SKL_A, problem, DESIGN, (0.5, 0.0), n_y=21)
    assert len(rows) == 21 * DESIGN.size
    assert {r["x"] for r in rows} == set(DESIGN.points)


def test_least_favorable_curves_need_semi_parametric_criterion():
    with pytest.raises(ConfigError):
        least_favorable_curves(CriterionKind.T, _quadratic_vs_linear(), DESIGN, (0.5, 0.0))

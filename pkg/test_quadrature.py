import math

import numpy as np
import pytest

from errors import NonConvergent
from quadrature import Interval, gauss_legendre, integrate


def test_two_point_rule():
    rule = gauss_legendre(2)
    assert rule.nodes == pytest.approx([-1 / math.sqrt(3), 1 / math.sqrt(3)], abs=1e-15)
    assert rule.weights == pytest.approx([1.0, 1.0], abs=1e-15)


def test_rule_shape_and_weight_sum():
    rule = gauss_legendre(32)
    assert np.all(np.diff(rule.nodes) > 0)
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(2.0, abs=1e-13)
    assert -1 < rule.nodes[0] and rule.nodes[-1] < 1


def test_rule_is_cached_and_read_only():
    assert gauss_legendre(16) is gauss_legendre(16)
    with pytest.raises(ValueError):
        gauss_legendre(16).nodes[0] = 0.0


@pytest.mark.parametrize("order", [1, 0, 500])
def test_rule_order_out_of_range(order):
    with pytest.raises(ValueError):
        gauss_legendre(order)


def test_polynomial_exactness():
    # n-point rule is exact up to degree 2n − 1
    rule = gauss_legendre(4)
    assert float(rule.nodes ** 7 @ rule.weights) == pytest.approx(0.0, abs=1e-14)
    assert float(rule.nodes ** 6 @ rule.weights) == pytest.approx(2 / 7, abs=1e-14)


def test_integrate_smooth():
    assert integrate(np.exp, Interval(0.0, 1.0)) == pytest.approx(math.e - 1, rel=1e-13)
    assert integrate(np.sin, Interval(0.0, math.pi)) == pytest.approx(2.0, rel=1e-13)


def test_integrate_gaussian_mass():
    pdf = lambda y: np.exp(-0.5 * y * y) / math.sqrt(2 * math.pi)
    assert integrate(pdf, Interval(-3.0, 3.0)) == pytest.approx(math.erf(3 / math.sqrt(2)), rel=1e-12)


def test_integrate_near_pole():
    # the ratio tilt puts a pole just outside the support
    eps = 1e-6
    got = integrate(lambda y: 1.0 / (y + eps), Interval(0.0, 1.0))
    assert got == pytest.approx(math.log((1 + eps) / eps), rel=1e-8)


def test_integrate_pole_one_gap_from_the_edge():
    # 1 + λu at 1e-10 on the support edge: panels near the peak carry most of the mass
    eps = 1e-10
    got = integrate(lambda y: 1.0 / (y + eps), Interval(0.0, 1.0))
    assert got == pytest.approx(math.log((1 + eps) / eps), rel=1e-8)


def test_integrate_rejects_non_finite():
    with pytest.raises(NonConvergent):
        integrate(lambda y: np.full_like(y, np.nan), Interval(0.0, 1.0))


def test_integrate_panel_cap():
    with pytest.raises(NonConvergent):
        integrate(lambda y: np.sin(1.0 / (y + 1e-12)), Interval(0.0, 1.0), max_panels=8)


def test_integrate_bad_tolerance():
    with pytest.raises(ValueError):
        integrate(np.exp, Interval(0.0, 1.0), tol=0.0)


def test_interval_validation():
    with pytest.raises(ValueError):
        Interval(1.0, 1.0)
    with pytest.raises(ValueError):
        Interval(0.0, math.inf)
    iv = Interval(-1, 3)
    assert iv.width == 4.0 and iv.midpoint == 1.0
    assert iv.contains(3.0) and not iv.contains(3.0, strict=True)


def test_three_point_rule():
    rule = gauss_legendre(3)
    r = math.sqrt(3 / 5)
    assert rule.nodes == pytest.approx([-r, 0.0, r], abs=1e-15)
    assert rule.weights == pytest.approx([5 / 9, 8 / 9, 5 / 9], abs=1e-15)


def test_order_64_monomials():
    rule = gauss_legendre(64)
    for k in range(128):
        exact = (1 + (-1) ** k) / (k + 1)
        assert float(rule.nodes ** k @ rule.weights) == pytest.approx(exact, abs=1e-12)


def test_truncated_normal_moments():
    mass = math.erf(3 / math.sqrt(2))
    pdf = lambda y: np.exp(-0.5 * y * y) / (math.sqrt(2 * math.pi) * mass)
    iv = Interval(-3.0, 3.0)
    assert integrate(lambda y: np.ones_like(y), iv) == pytest.approx(6.0, rel=1e-12)
    assert integrate(pdf, iv) == pytest.approx(1.0, abs=1e-10)
    assert integrate(lambda y: y * pdf(y), iv) == pytest.approx(0.0, abs=1e-10)


def test_linearity_and_additivity():
    f, g = np.exp, np.cos
    whole = Interval(-1.0, 2.0)
    combo = integrate(lambda y: 2.0 * f(y) - 3.0 * g(y), whole)
    assert combo == pytest.approx(2.0 * integrate(f, whole) - 3.0 * integrate(g, whole), rel=1e-10)
    split = integrate(f, Interval(-1.0, 0.5)) + integrate(f, Interval(0.5, 2.0))
    assert split == pytest.approx(integrate(f, whole), rel=2e-10)

"""
Lambda Solver
===============
Scalar root equations behind the semi-parametric criteria.

Case (a), ratio tilt: find λ ≠ 0 with ∫ f₁(y) / (1 + λ(y − η₂)) dy = 1 and
1 + λ(y − η₂) > 0 on the support of f₁. Writing u = y − η₂,

    ∫ f₁/(1 + λu) dy − 1 = −λ · R(λ),   R(λ) = ∫ f₁ u/(1 + λu) dy,

and R is strictly decreasing with R(0) = E₁[y] − η₂, so the non-zero root is
the unique zero of R inside the pole-free interval.

Case (b), exponential tilt: find λ with ∫ y f₂ e^{−λy} dy / ∫ f₂ e^{−λy} dy = η₁.
The tilted mean is strictly decreasing in λ (its derivative is minus the
tilted variance). Exponents are shifted by the support endpoint that keeps
e^{−λ(y − c)} ≤ 1.

Both roots are found by bracketed regula falsi (Illinois variant) with
bisection whenever the secant step stops shrinking the bracket.

Requirements:
    pip install numpy scipy

Usage:
    python lambda_solver.py --test
"""

from __future__ import annotations

import sys
import math
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from errors import ConfigError, NoBracket, NonConvergent, OutOfSupport, UnboundedSupport
from models import DensityKind, PointDensity
from quadrature import DEFAULT_TOL, Interval, integrate

# ─── Configuration ────────────────────────────────────────────────────────────

DEFAULT_DELTA = 1e-8
DEFAULT_BETA = 50.0
DEFAULT_MAX_ITER = 200
RESIDUAL_TOL = 1e-10
EQUAL_TOL = 1e-12         # |E[y] − η| below this means λ = 0
POLE_GAPS = (0.5, 1e-1, 1e-2, 1e-3, 1e-4, 1e-6, 1e-8, 1e-10)   # 1 + λ(edge − η₂) at the scan points
SUBSTITUTE_BELOW = 0.5    # edge gap under which ratio integrals are taken in log d

# ─── Logging ──────────────────────────────────────────────────────────────────

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s | %(levelname)-7s | %(message)s",
    datefmt="%H:%M:%S",
)
log = logging.getLogger("lambda_solver")

# ─── Data Models ──────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class SolverConfig:
    delta: float = DEFAULT_DELTA
    beta: float = DEFAULT_BETA
    max_iter: int = DEFAULT_MAX_ITER
    tol: float = RESIDUAL_TOL
    quad_tol: float = DEFAULT_TOL

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must be in (0, 1), got {self.delta}", origin="lambda_solver", field="delta")
        if not self.beta > 0.0:
            raise ConfigError(f"beta must be positive, got {self.beta}", origin="lambda_solver", field="beta")
        if self.beta <= self.delta:
            raise ConfigError("beta must exceed delta", origin="lambda_solver", field="beta")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be ≥ 1, got {self.max_iter}", origin="lambda_solver",
                              field="max_iter")
        if not (self.tol > 0 and self.quad_tol > 0):
            raise ConfigError("tolerances must be positive", origin="lambda_solver")


@dataclass(frozen=True)
class LambdaSolution:
    """
    Root of the ratio-tilt (case "a") or exponential-tilt (case "b") equation.

    For case "b", ``shift`` is the exponent offset c and ``log_norm`` is
    log ∫ f₂ e^{−λ(y − c)} dy at the root.
    """

    lam: float
    bracket: Interval
    residual: float
    evals: int
    case: str
    closed_form: bool = False
    shift: float = 0.0
    log_norm: float = 0.0

    def summary(self) -> dict:
        return {
            "lambda": self.lam,
            "bracket": list(self.bracket.as_tuple()),
            "residual": self.residual,
            "evals": self.evals,
            "case": self.case,
            "closed_form": self.closed_form,
        }


DEFAULT_SOLVER = SolverConfig()

# ─── Root Finding ─────────────────────────────────────────────────────────────


def _bracketed_root(
    fn: Callable[[float], float],
    lo: float,
    hi: float,
    f_lo: float,
    f_hi: float,
    *,
    residual: Callable[[float, float], float],
    tol: float,
    max_iter: int,
) -> tuple[float, float, int]:
    """Illinois regula falsi on [lo, hi]; returns (root, fn(root), evaluations)."""
    a, b, fa, fb = lo, hi, f_lo, f_hi
    retained = 0          # +1: a kept last step, −1: b kept last step
    width_mark = b - a
    for it in range(max_iter):
        c = (a * fb - b * fa) / (fb - fa) if fb != fa else 0.5 * (a + b)
        if it % 3 == 2:
            if (b - a) > 0.5 * width_mark:
                c = 0.5 * (a + b)
            width_mark = b - a
        if not a < c < b:
            c = 0.5 * (a + b)

        fc = fn(c)
        if fc == 0.0 or residual(c, fc) <= tol:
            return c, fc, it + 1
        if (b - a) <= 4.0 * np.finfo(float).eps * max(abs(a), abs(b)):
            log.debug("bracket collapsed at λ=%.17g with residual %.3g", c, residual(c, fc))
            return c, fc, it + 1

        if (fc > 0) == (fa > 0):
            a, fa = c, fc
            if retained == -1:
                fb *= 0.5
            retained = -1
        else:
            b, fb = c, fc
            if retained == 1:
                fa *= 0.5
            retained = 1

    raise NonConvergent(
        f"root not found in {max_iter} iterations (bracket [{a:.6g}, {b:.6g}])",
        origin="lambda_solver",
    )


# ─── Case (a): ratio tilt ────────────────────────────────────────────────────


def ratio_integral(
    f1: PointDensity,
    eta2: float,
    lam: float,
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    tol: float = DEFAULT_TOL,
    *,
    substitute_below: float = SUBSTITUTE_BELOW,
) -> float:
    """
    ∫ f₁(y) fn(y, s) / d(y) dy over the f₁ support, with d = 1 + λ(y − η₂)
    and s = log d.

    When d at the pole-side edge is below ``substitute_below`` the integral is
    taken in s instead of y, which turns the 1/d peak into a flat integrand.
    """
    iv = f1.support
    ymin, ymax = iv.as_tuple()
    if lam == 0.0:
        return integrate(lambda y: f1.pdf(y) * fn(y, np.zeros_like(y)), iv, tol)
    edge = ymin if lam > 0 else ymax
    gap = 1.0 + lam * (edge - eta2)
    if not gap > 0.0:
        raise OutOfSupport(f"λ={lam:.17g} puts the ratio-tilt pole inside the support", origin="lambda_solver")

    if gap >= substitute_below:
        def direct(y):
            d = gap + lam * (y - edge)
            return f1.pdf(y) * fn(y, np.log(d)) / d
        return integrate(direct, iv, tol)

    def in_log(s):
        y = np.clip(edge + (np.exp(s) - gap) / lam, ymin, ymax)
        return f1.pdf(y) * fn(y, s)

    s_iv = Interval(math.log(gap), math.log(gap + abs(lam) * iv.width))
    return integrate(in_log, s_iv, tol) / abs(lam)


def ratio_scan(side: int, ymin: float, ymax: float, eta2: float, delta: float) -> list[float]:
    """λ values on one half-interval, from ±δ toward the pole at the edge gaps in POLE_GAPS."""
    span = eta2 - ymin if side > 0 else ymax - eta2
    pole = 1.0 / span
    if pole <= delta:
        half = "Λ⁺" if side > 0 else "Λ⁻"
        raise NoBracket(f"{half} is empty: pole {side * pole:.3g} within δ of 0", origin="lambda_solver")
    mags = [delta] + [(1.0 - g) * pole for g in POLE_GAPS if (1.0 - g) * pole > delta]
    return [side * m for m in mags]


def solve_lambda_a(f1: PointDensity, eta2: float, cfg: SolverConfig = DEFAULT_SOLVER) -> LambdaSolution:
    """
    Solve ∫ f₁/(1 + λ(y − η₂)) dy = 1 for the non-zero λ.

    The half-interval follows the sign of E₁[y] − η₂ under the (possibly
    truncated) f₁. R is scanned from λ = 0 toward the pole and the first sign
    change is refined.

    Raises:
        UnboundedSupport: f₁ has no bounded support.
        OutOfSupport: η₂ is not strictly inside the support of f₁.
        NoBracket: R(λ) keeps its sign up to an edge gap of POLE_GAPS[-1].
        NonConvergent: the root finder exhausted max_iter.
    """
    if f1.support is None:
        raise UnboundedSupport("case (a) needs a bounded f₁ support", origin="lambda_solver")
    ymin, ymax = f1.support.as_tuple()
    if not ymin < eta2 < ymax:
        raise OutOfSupport(
            f"η₂={eta2:.6g} not inside the f₁ support ({ymin:.6g}, {ymax:.6g})", origin="lambda_solver"
        )
    mean1 = integrate(lambda y: y * f1.pdf(y), f1.support, cfg.quad_tol)
    r0 = mean1 - eta2
    if abs(r0) <= EQUAL_TOL:
        return LambdaSolution(0.0, Interval(-cfg.delta, cfg.delta), 0.0, 0, "a")

    evals = 0

    def R(lam: float) -> float:
        nonlocal evals
        evals += 1
        return ratio_integral(f1, eta2, lam, lambda y, s: y - eta2, cfg.quad_tol)

    def residual(lam: float, r: float) -> float:
        return abs(lam * r)

    side = 1 if r0 > 0 else -1
    prev_lam, prev_r = 0.0, r0
    for lam in ratio_scan(side, ymin, ymax, eta2, cfg.delta):
        r = R(lam)
        if r == 0.0:
            return LambdaSolution(lam, Interval(min(prev_lam, lam), max(prev_lam, lam)), 0.0, evals, "a")
        if (r > 0) != (prev_r > 0):
            if side > 0:
                lo, hi, r_lo, r_hi = prev_lam, lam, prev_r, r
            else:
                lo, hi, r_lo, r_hi = lam, prev_lam, r, prev_r
            root, r_root, _ = _bracketed_root(R, lo, hi, r_lo, r_hi, residual=residual, tol=cfg.tol,
                                              max_iter=cfg.max_iter)
            return LambdaSolution(root, Interval(lo, hi), residual(root, r_root), evals, "a")
        prev_lam, prev_r = lam, r

    raise NoBracket(
        f"case (a): R(λ) keeps its sign up to edge gap {POLE_GAPS[-1]:g} on "
        f"{'Λ⁺' if side > 0 else 'Λ⁻'} (E₁[y]={mean1:.6g}, η₂={eta2:.6g}, "
        f"support [{ymin:.6g}, {ymax:.6g}])",
        origin="lambda_solver",
    )


# ─── Case (b): exponential tilt ──────────────────────────────────────────────


def tilt_moments(f2: PointDensity, lam: float, tol: float = DEFAULT_TOL) -> tuple[float, float, float]:
    """Returns (tilted mean, log ∫ f₂ e^{−λ(y − c)} dy, c) for a bounded f₂."""
    iv = f2.support
    c = iv.lo if lam >= 0 else iv.hi
    z = integrate(lambda y: f2.pdf(y) * np.exp(-lam * (y - c)), iv, tol)
    m = integrate(lambda y: y * f2.pdf(y) * np.exp(-lam * (y - c)), iv, tol)
    return m / z, math.log(z), c


def solve_lambda_b(f2: PointDensity, eta1: float, cfg: SolverConfig = DEFAULT_SOLVER) -> LambdaSolution:
    """
    Solve tilted-mean(λ) = η₁. Normal f₂ uses λ = (η₂ − η₁)/v² exactly.

    The half-interval follows the sign of the untilted mean of f₂ minus η₁.

    Raises:
        UnboundedSupport: f₂ is an untruncated lognormal.
        NoBracket: η₁ is outside the tilted means reachable on that half of [−β, β].
        NonConvergent: the root finder exhausted max_iter.
    """
    eta2 = f2.eta
    if f2.kind is DensityKind.NORMAL:
        v2 = f2.variance
        lam = (eta2 - eta1) / v2
        log_norm = -lam * eta2 + 0.5 * lam * lam * v2
        return LambdaSolution(lam, Interval(lam - cfg.delta, lam + cfg.delta), 0.0, 0, "b",
                              closed_form=True, shift=0.0, log_norm=log_norm)
    if f2.support is None:
        raise UnboundedSupport(f"case (b) with {f2.kind.value} f₂ needs a bounded support",
                               origin="lambda_solver")

    mean2, _, _ = tilt_moments(f2, 0.0, cfg.quad_tol)
    e0 = mean2 - eta1
    if abs(e0) <= EQUAL_TOL:
        return LambdaSolution(0.0, Interval(-cfg.delta, cfg.delta), 0.0, 0, "b")

    evals = 0

    def excess(lam: float) -> float:
        nonlocal evals
        evals += 1
        mean, _, _ = tilt_moments(f2, lam, cfg.quad_tol)
        return mean - eta1

    def residual(lam: float, e: float) -> float:
        return abs(e)

    side = 1 if e0 > 0 else -1
    prev_lam, prev_e = 0.0, e0
    for lam in (side * cfg.delta, side * cfg.beta):
        e = excess(lam)
        if e == 0.0:
            _, log_norm, c = tilt_moments(f2, lam, cfg.quad_tol)
            return LambdaSolution(lam, Interval(min(prev_lam, lam), max(prev_lam, lam)), 0.0, evals, "b",
                                  shift=c, log_norm=log_norm)
        if (e > 0) != (prev_e > 0):
            if side > 0:
                lo, hi, e_lo, e_hi = prev_lam, lam, prev_e, e
            else:
                lo, hi, e_lo, e_hi = lam, prev_lam, e, prev_e
            root, e_root, _ = _bracketed_root(excess, lo, hi, e_lo, e_hi, residual=residual, tol=cfg.tol,
                                              max_iter=cfg.max_iter)
            _, log_norm, c = tilt_moments(f2, root, cfg.quad_tol)
            return LambdaSolution(root, Interval(lo, hi), abs(e_root), evals, "b", shift=c, log_norm=log_norm)
        prev_lam, prev_e = lam, e

    raise NoBracket(
        f"case (b): tilted mean never reaches η₁={eta1:.6g} on "
        f"{'[δ, β]' if side > 0 else '[−β, −δ]'} with β={cfg.beta:g} "
        f"(η₂={eta2:.6g}); increase beta or check the support",
        origin="lambda_solver",
    )


# ─── Self-Test ────────────────────────────────────────────────────────────────


def _self_test():
    from models import DensityFamily, parse_mean

    log.info("Running lambda solver self-test …")
    fam = DensityFamily(DensityKind.TRUNCATED_NORMAL, parse_mean("1"), half_width=3.0)
    f1 = fam.at_eta(0.0, 1.0)

    sol = solve_lambda_a(f1, -0.5)
    assert sol.lam > 0 and sol.residual <= RESIDUAL_TOL
    sol = solve_lambda_a(f1, 0.5)
    assert sol.lam < 0
    assert solve_lambda_a(f1, 0.0).lam == 0.0
    log.info("  solve_lambda_a … OK (λ(−0.5) sign law)")

    normal = DensityFamily(DensityKind.NORMAL, parse_mean("2")).at_eta(1.0, 2.0)
    sol = solve_lambda_b(normal, 0.0)
    assert abs(sol.lam - 0.5) < 1e-15
    sol = solve_lambda_b(f1, 0.3)
    assert sol.lam < 0 and sol.residual <= RESIDUAL_TOL
    log.info("  solve_lambda_b … OK")

    log.info("Lambda solver self-test PASSED.")


# ─── Entry Point ──────────────────────────────────────────────────────────────

if __name__ == "__main__":
    if "--test" in sys.argv:
        _self_test()
        sys.exit(0)
    print("Usage:  python lambda_solver.py --test")
    sys.exit(1)

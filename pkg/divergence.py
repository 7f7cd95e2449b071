"""
Divergence
============
Pointwise Kullback–Leibler machinery at a single design point x:

  • kl_point       — ∫ f₁ log(f₁/f₂) dy between two fully specified densities
  • skl_a_point    — inf over f₂ with mean η₂ on the support of f₁ (ratio tilt)
  • skl_b_point    — inf over f₁ with mean η₁ against a given f₂ (exponential tilt)
  • optimal_f2 / optimal_f1 — the least-favourable densities attaining those infima

When η₂ (case a) or η₁ (case b) is not strictly inside the support of the given
density the admissible class is empty, the divergence is +∞ and the result
carries the distance to the feasible range so that minimisers can steer back.

Requirements:
    pip install numpy scipy

Usage:
    python divergence.py --test
"""

from __future__ import annotations

import sys
import math
import logging
from dataclasses import dataclass, field

import numpy as np

from errors import NoBracket, SupportMismatch
from lambda_solver import (
    DEFAULT_SOLVER,
    LambdaSolution,
    SolverConfig,
    ratio_integral,
    ratio_scan,
    solve_lambda_a,
    solve_lambda_b,
    tilt_moments,
)
from models import DensityKind, PointDensity
from quadrature import DEFAULT_TOL, Interval, integrate

# ─── Configuration ────────────────────────────────────────────────────────────

SUPPORT_MATCH_TOL = 1e-12     # relative, for "same support" checks
CURVE_POINTS = 201            # y-grid size for least-favourable density curves

# ─── Logging ──────────────────────────────────────────────────────────────────

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s | %(levelname)-7s | %(message)s",
    datefmt="%H:%M:%S",
)
log = logging.getLogger("divergence")

# ─── Data Models ──────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class PointDivergence:
    """I₁,₂ at one design point. ``value`` is +∞ when the tilt is infeasible."""

    x: float
    value: float
    eta1: float
    eta2: float
    lam: LambdaSolution | None = None
    infeasibility: float = 0.0

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.value)

    def summary(self) -> dict:
        return {
            "x": self.x,
            "value": self.value if self.feasible else None,
            "eta1": self.eta1,
            "eta2": self.eta2,
            "lambda": None if self.lam is None else self.lam.lam,
        }


@dataclass(frozen=True, eq=False)
class LeastFavorable:
    """A tilted density y ↦ base(y)·weight(y), normalised on ``support``."""

    base: PointDensity = field(repr=False)
    lam: LambdaSolution
    case: str
    eta_target: float

    @property
    def support(self) -> Interval | None:
        return self.base.support

    def pdf(self, y) -> np.ndarray:
        yv = np.asarray(y, dtype=float)
        lam = self.lam.lam
        if self.case == "a":
            return self.base.pdf(yv) / (1.0 + lam * (yv - self.eta_target))
        if self.lam.closed_form:
            v2 = self.base.variance
            z = (yv - self.eta_target) / math.sqrt(v2)
            return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi * v2)
        c = self.lam.shift
        return self.base.pdf(yv) * np.exp(-lam * (yv - c) - self.lam.log_norm)

    def __call__(self, y) -> np.ndarray:
        return self.pdf(y)


# ─── Kullback–Leibler ─────────────────────────────────────────────────────────


def _gaussian_kl(mu1: float, s1: float, mu2: float, s2: float) -> float:
    return math.log(s2 / s1) + (s1 * s1 + (mu1 - mu2) ** 2) / (2.0 * s2 * s2) - 0.5


def kl_integral(p, q, iv: Interval, tol: float = DEFAULT_TOL) -> float:
    """∫ p log(p/q) dy over *iv* for vectorised densities p, q positive on iv."""

    def integrand(y):
        pv = p(y)
        qv = q(y)
        return np.where(pv > 0, pv * (np.log(np.where(pv > 0, pv, 1.0)) - np.log(qv)), 0.0)

    return integrate(integrand, iv, tol)


def kl_point(f1: PointDensity, f2: PointDensity, tol: float = DEFAULT_TOL) -> float:
    """
    KL divergence of f₂ from f₁ (natural log).

    Two normals or two lognormals use the Gaussian closed form on the
    (log-)normal scale; bounded densities are integrated over their common
    support.

    Raises:
        SupportMismatch: the supports differ, or one side is unbounded.
    """
    pair = {f1.kind, f2.kind}
    if pair == {DensityKind.NORMAL} or pair == {DensityKind.LOGNORMAL}:
        return max(_gaussian_kl(f1.mu, f1.sigma, f2.mu, f2.sigma), 0.0)
    if f1.support is None or f2.support is None:
        raise SupportMismatch(
            f"cannot compare {f1.kind.value} with {f2.kind.value}: unbounded support", origin="divergence"
        )
    s1, s2 = f1.support, f2.support
    scale = max(1.0, abs(s1.lo), abs(s1.hi))
    if abs(s1.lo - s2.lo) > SUPPORT_MATCH_TOL * scale or abs(s1.hi - s2.hi) > SUPPORT_MATCH_TOL * scale:
        raise SupportMismatch(
            f"supports differ: [{s1.lo:.6g}, {s1.hi:.6g}] vs [{s2.lo:.6g}, {s2.hi:.6g}]", origin="divergence"
        )
    return max(kl_integral(f1.pdf, f2.pdf, s1, tol), 0.0)


# ─── Semi-parametric case (a) ────────────────────────────────────────────────


def _outside(iv: Interval, eta: float) -> float | None:
    """Distance of eta from the open interval, None when strictly inside."""
    if iv.lo < eta < iv.hi:
        return None
    return max(iv.lo - eta, eta - iv.hi, 0.0)


def _log_dual(f1: PointDensity, eta2: float, lam: float, tol: float) -> float:
    """∫ f₁ log(1 + λ(y − η₂)) dy."""
    return ratio_integral(f1, eta2, lam, lambda y, s: s * np.exp(s), tol)


def _pole_limit(f1: PointDensity, eta2: float, cfg: SolverConfig, x: float) -> PointDivergence:
    """
    η₂ deep in a tail of f₁: R(λ) keeps its sign up to the last scan point.
    The dual ∫ f₁ log(1 + λ(y − η₂)) dy is concave in λ and still increasing
    there, so its value at that point is the infimum up to the final edge gap.
    """
    ymin, ymax = f1.support.as_tuple()
    mean = integrate(lambda y: y * f1.pdf(y), f1.support, cfg.quad_tol)
    side = 1 if mean > eta2 else -1
    lam = ratio_scan(side, ymin, ymax, eta2, cfg.delta)[-1]
    value = _log_dual(f1, eta2, lam, cfg.quad_tol)
    log.debug("case (a): pole-end dual value at η₁=%.6g η₂=%.6g (λ=%.6g)", f1.eta, eta2, lam)
    return PointDivergence(x, max(value, 0.0), f1.eta, eta2, None)


def skl_a_point(f1: PointDensity, eta2: float, cfg: SolverConfig = DEFAULT_SOLVER, x: float = math.nan) -> PointDivergence:
    """∫ log{1 + λ̄(y − η₂)} f₁(y) dy with λ̄ from the ratio-tilt equation."""
    d = _outside(f1.support, eta2) if f1.support is not None else None
    if d is not None:
        return PointDivergence(x, math.inf, f1.eta, eta2, None, d)
    try:
        sol = solve_lambda_a(f1, eta2, cfg)
    except NoBracket:
        return _pole_limit(f1, eta2, cfg, x)
    if sol.lam == 0.0:
        return PointDivergence(x, 0.0, f1.eta, eta2, sol)
    value = _log_dual(f1, eta2, sol.lam, cfg.quad_tol)
    return PointDivergence(x, max(value, 0.0), f1.eta, eta2, sol)


def optimal_f2(f1: PointDensity, eta2: float, cfg: SolverConfig = DEFAULT_SOLVER) -> LeastFavorable:
    """f₂*(y) = f₁(y) / (1 + λ̄(y − η₂)); mean η₂ and unit mass on the f₁ support."""
    sol = solve_lambda_a(f1, eta2, cfg)
    return LeastFavorable(f1, sol, "a", eta2)


# ─── Semi-parametric case (b) ────────────────────────────────────────────────


def _beta_limit(f2: PointDensity, eta1: float, cfg: SolverConfig, x: float) -> PointDivergence:
    """η₁ beyond the tilted means reachable on [−β, β]: dual value at the ±β end."""
    mean, _, _ = tilt_moments(f2, 0.0, cfg.quad_tol)
    lam = cfg.beta if mean > eta1 else -cfg.beta
    _, log_norm, c = tilt_moments(f2, lam, cfg.quad_tol)
    log.debug("case (b): β-end dual value at η₁=%.6g η₂=%.6g (λ=%.6g)", eta1, f2.eta, lam)
    return PointDivergence(x, max(-lam * (eta1 - c) - log_norm, 0.0), eta1, f2.eta, None)


def skl_b_point(f2: PointDensity, eta1: float, cfg: SolverConfig = DEFAULT_SOLVER, x: float = math.nan) -> PointDivergence:
    """
    log μ′(λ̄) − λ̄η₁ with μ′ = 1/∫ f₂ e^{−λ̄y} dy, i.e. KL(f₁* ‖ f₂).
    For a normal f₂ this is (η₁ − η₂)²/(2v²).
    """
    if f2.kind is DensityKind.NORMAL:
        sol = solve_lambda_b(f2, eta1, cfg)
        value = (eta1 - f2.eta) ** 2 / (2.0 * f2.variance)
        return PointDivergence(x, value, eta1, f2.eta, sol)
    d = _outside(f2.support, eta1) if f2.support is not None else None
    if d is not None:
        return PointDivergence(x, math.inf, eta1, f2.eta, None, d)
    try:
        sol = solve_lambda_b(f2, eta1, cfg)
    except NoBracket:
        return _beta_limit(f2, eta1, cfg, x)
    if sol.lam == 0.0:
        return PointDivergence(x, 0.0, eta1, f2.eta, sol)
    value = -sol.lam * (eta1 - sol.shift) - sol.log_norm
    return PointDivergence(x, max(value, 0.0), eta1, f2.eta, sol)


def optimal_f1(f2: PointDensity, eta1: float, cfg: SolverConfig = DEFAULT_SOLVER) -> LeastFavorable:
    """f₁*(y) = f₂(y) e^{−λ̄y} / ∫ f₂ e^{−λ̄y} dy; Normal(η₁, v²) for a normal f₂."""
    sol = solve_lambda_b(f2, eta1, cfg)
    return LeastFavorable(f2, sol, "b", eta1)


# ─── Curves ──────────────────────────────────────────────────────────────────


def density_curve(
    given: PointDensity,
    eta_other: float,
    case: str,
    cfg: SolverConfig = DEFAULT_SOLVER,
    n_y: int = CURVE_POINTS,
    x: float = math.nan,
) -> list[dict]:
    """Rows of (y, given density, least-favourable density, η₁, η₂, λ̄) on a y-grid."""
    if case == "a":
        lf = optimal_f2(given, eta_other, cfg)
        eta1, eta2 = given.eta, eta_other
    else:
        lf = optimal_f1(given, eta_other, cfg)
        eta1, eta2 = eta_other, given.eta
    if given.support is not None:
        lo, hi = given.support.as_tuple()
    else:
        lo, hi = given.eta - 4.0 * math.sqrt(given.variance), given.eta + 4.0 * math.sqrt(given.variance)
    ys = np.linspace(lo, hi, n_y)
    f_given = given.pdf(ys)
    f_opt = lf.pdf(ys)
    return [
        {"x": x, "y": float(y), "f_given": float(a), "f_optimal": float(b),
         "eta1": eta1, "eta2": eta2, "lambda": lf.lam.lam}
        for y, a, b in zip(ys, f_given, f_opt)
    ]


def lambda_curve(f1: PointDensity, eta2_values, cfg: SolverConfig = DEFAULT_SOLVER) -> list[dict]:
    """λ̄ and the case-(a) divergence as η₂ sweeps *eta2_values* for a fixed f₁."""
    rows = []
    for eta2 in eta2_values:
        pd = skl_a_point(f1, float(eta2), cfg)
        rows.append({
            "eta2": float(eta2),
            "lambda": pd.lam.lam if pd.lam is not None else math.nan,
            "value": pd.value,
        })
    return rows


# ─── Self-Test ────────────────────────────────────────────────────────────────


def _self_test():
    from models import DensityFamily, parse_mean

    log.info("Running divergence self-test …")
    fam = DensityFamily(DensityKind.TRUNCATED_NORMAL, parse_mean("1"), half_width=3.0)
    f1 = fam.at_eta(0.0, 1.0)

    a = skl_a_point(f1, -0.5)
    b = skl_a_point(f1, 0.5)
    assert a.value > 0 and abs(a.value - b.value) < 1e-8
    dual = kl_point(f1, f1)
    assert dual == 0.0
    lf = optimal_f2(f1, -0.5)
    assert abs(kl_integral(f1.pdf, lf.pdf, f1.support) - a.value) < 1e-8
    log.info("  skl_a_point … OK (%.6g)", a.value)

    normal = DensityFamily(DensityKind.NORMAL, parse_mean("2")).at_eta(1.0, 2.0)
    assert abs(skl_b_point(normal, 0.0).value - 0.25) < 1e-15
    log.info("  skl_b_point … OK")

    log.info("Divergence self-test PASSED.")


# ─── Entry Point ──────────────────────────────────────────────────────────────

if __name__ == "__main__":
    if "--test" in sys.argv:
        _self_test()
        sys.exit(0)
    print("Usage:  python divergence.py --test")
    sys.exit(1)

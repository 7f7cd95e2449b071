"""
Equivalence Verifier
======================
Certifies a candidate design through its sensitivity function

    ψ(x) = I(x, θ₂*) − Σᵢ ωᵢ I(xᵢ, θ₂*)

where θ₂* is the inner minimiser for the design. The design is optimal iff
ψ ≤ 0 on the whole design space with equality at the support points.

ψ is scanned on a dense grid; the grid argmax is polished on the continuous
space. Tolerances are relative to the criterion value.

Requirements:
    pip install numpy scipy

Usage:
    python equivalence.py --test
"""

from __future__ import annotations

import csv
import sys
import math
import time
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from criteria import (
    DEFAULT_INNER,
    CriterionKind,
    CriterionReport,
    Design,
    DiscriminationProblem,
    InnerConfig,
    contributions,
    inner_minimize,
)

# ─── Configuration ────────────────────────────────────────────────────────────

VERIFY_GRID_N = 2001
VERIFY_TOL = 1e-4

# ─── Logging ──────────────────────────────────────────────────────────────────

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s | %(levelname)-7s | %(message)s",
    datefmt="%H:%M:%S",
)
log = logging.getLogger("equivalence")

# ─── Data Models ──────────────────────────────────────────────────────────────


class Verdict(str, Enum):
    OPTIMAL = "OPTIMAL"
    NOT_OPTIMAL = "NOT_OPTIMAL"


@dataclass(frozen=True)
class SensitivityReport:
    kind: CriterionKind
    grid_x: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    max_violation: float
    argmax_x: float
    support_residuals: tuple[float, ...]
    verdict: Verdict
    value: float
    theta2_star: tuple[float, ...]
    tol: float
    qualifiers: tuple[str, ...] = ()

    @property
    def grid(self) -> list[tuple[float, float]]:
        return [(float(x), float(p)) for x, p in zip(self.grid_x, self.psi)]

    @property
    def bound_is_heuristic(self) -> bool:
        return self.kind.kl_type

    def summary(self) -> dict:
        return {
            "criterion": self.kind.value,
            "verdict": self.verdict.value,
            "value": self.value,
            "theta2_star": list(self.theta2_star),
            "max_violation": self.max_violation,
            "argmax_x": self.argmax_x,
            "support_residuals": list(self.support_residuals),
            "tol": self.tol,
            "efficiency_bound": efficiency_bound(self, self.value) if self.value > 0 else None,
            "efficiency_bound_heuristic": self.bound_is_heuristic,
            "qualifiers": list(self.qualifiers),
        }


# ─── Core ─────────────────────────────────────────────────────────────────────


def sensitivity(
    kind: CriterionKind,
    problem: DiscriminationProblem,
    report: CriterionReport,
    xs,
) -> np.ndarray:
    """ψ on the points xs for the design's inner minimiser in *report*."""
    return contributions(kind, problem, xs, report.theta2_star) - report.value


def verify(
    kind: CriterionKind,
    design: Design,
    problem: DiscriminationProblem,
    tol: float = VERIFY_TOL,
    *,
    grid_n: int = VERIFY_GRID_N,
    inner_cfg: InnerConfig = DEFAULT_INNER,
    report: CriterionReport | None = None,
) -> SensitivityReport:
    """
    OPTIMAL iff max ψ ≤ tol·K and every |ψ(xᵢ)| ≤ tol·K at the support points.
    A non-unique inner minimiser is passed through as a qualifier.
    """
    problem.require(kind)
    t0 = time.time()
    if report is None:
        report = inner_minimize(kind, design, problem, inner_cfg)
    grid = problem.space.grid(grid_n)
    psi = sensitivity(kind, problem, report, grid)

    i = int(np.argmax(psi))
    argmax_x, max_violation = float(grid[i]), float(psi[i])
    if math.isfinite(max_violation):
        lo, hi = problem.space.domain.as_tuple()
        spacing = (hi - lo) / (grid_n - 1)
        a, b = max(lo, argmax_x - spacing), min(hi, argmax_x + spacing)

        def neg_psi(x: float) -> float:
            v = float(sensitivity(kind, problem, report, [x])[0])
            return -v if math.isfinite(v) else -math.inf

        res = minimize_scalar(neg_psi, bounds=(a, b), method="bounded", options={"xatol": 1e-10})
        if res.success and -res.fun > max_violation:
            argmax_x, max_violation = float(res.x), float(-res.fun)

    residuals = tuple(float(c) - report.value for c in report.point_contributions)
    limit = tol * report.value
    ok = max_violation <= limit and all(abs(r) <= limit for r in residuals)
    verdict = Verdict.OPTIMAL if ok else Verdict.NOT_OPTIMAL

    out = SensitivityReport(
        kind=kind,
        grid_x=grid,
        psi=psi,
        max_violation=max_violation,
        argmax_x=argmax_x,
        support_residuals=residuals,
        verdict=verdict,
        value=report.value,
        theta2_star=report.theta2_star,
        tol=tol,
        qualifiers=report.qualifiers,
    )
    log.info("Verify %s: %s (max ψ=%.3g at x=%.6g, K=%.6g, %.1fs)%s", kind.value, verdict.value,
             max_violation, argmax_x, report.value, time.time() - t0,
             f" [{', '.join(report.qualifiers)}]" if report.qualifiers else "")
    return out


def efficiency_bound(report: SensitivityReport, value: float) -> float:
    """value / (value + max(0, max ψ)), in (0, 1]."""
    viol = max(0.0, report.max_violation)
    if not math.isfinite(viol):
        return 0.0
    return min(1.0, value / (value + viol))


def write_csv(report: SensitivityReport, path: str | Path) -> Path:
    """Sensitivity grid as CSV: header ``x,psi``, 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "psi"])
        for x, p in zip(report.grid_x, report.psi):
            writer.writerow([f"{x:.17g}", f"{p:.17g}"])
    log.info("Wrote %d sensitivity rows to %s", len(report.grid_x), path)
    return path


# ─── Self-Test ────────────────────────────────────────────────────────────────


def _self_test():
    from models import DesignSpace, ModelSpec, parse_mean
    from quadrature import Interval

    log.info("Running equivalence self-test …")
    problem = DiscriminationProblem(
        mean1=parse_mean("p1 + p2*x + p3*x^2"),
        theta1=(0.0, 0.0, 1.0),
        model2=ModelSpec(parse_mean("p1 + p2*x"), 2, (Interval(-10, 10), Interval(-10, 10))),
        space=DesignSpace(Interval(-1.0, 1.0)),
    )
    good = verify(CriterionKind.T, Design.from_arrays([-1, 0, 1], [0.25, 0.5, 0.25]), problem)
    assert good.verdict is Verdict.OPTIMAL
    bad = verify(CriterionKind.T, Design.from_arrays([-1, 0, 1], [1 / 3, 1 / 3, 1 / 3]), problem)
    assert bad.verdict is Verdict.NOT_OPTIMAL
    assert efficiency_bound(bad, bad.value) < 1.0
    log.info("Equivalence self-test PASSED.")


# ─── Entry Point ──────────────────────────────────────────────────────────────

if __name__ == "__main__":
    if "--test" in sys.argv:
        _self_test()
        sys.exit(0)
    print("Usage:  python equivalence.py --test")
    sys.exit(1)

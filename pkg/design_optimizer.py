"""
Design Optimizer
==================
First-order exchange algorithm for maximin discrimination designs.

Each outer iteration:
    1. θ̂₂ = inner minimiser on the current design (warm-started)
    2. x*  = argmax of I(x, θ̂₂) over the candidate grid (smallest x on ties)
    3. ξ  ← (1 − γ)ξ + γ δ_{x*},  γ = 1/(k + 1), halved until K does not drop
    4. every ``refine_every`` iterations: merge close points, drop light
       points, re-optimise the weights on the current support, polish the
       points once, and re-check the stop rule on the refined design

The loop stops once max ψ ≤ stop_tol · K(ξ) under a full multistart inner
minimisation. Support polish and weight refinement then alternate until the
points stop moving; a consolidation step is kept only if K does not drop.
Reaching max_outer_iters without meeting the stop rule raises a StallWarning.

Requirements:
    pip install numpy scipy

Usage:
    python design_optimizer.py --test
"""

from __future__ import annotations

import sys
import math
import time
import logging
import warnings
from dataclasses import dataclass, field

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
from errors import ConfigError, StallWarning

# ─── Configuration ────────────────────────────────────────────────────────────

GRID_N = 401
MAX_OUTER_ITERS = 500
STOP_TOL = 1e-5
MERGE_FRACTION = 1e-3         # merge_tol default, fraction of the design-space width
WEIGHT_FLOOR = 1e-4
REFINE_EVERY = 25
MAX_HALVINGS = 10
STALL_ITERS = 50
STALL_TOL = 1e-14
WEIGHT_TOL = 1e-10
WEIGHT_MAX_ITER = 200
ASCENT_SLACK = 1e-10
TIE_TOL = 1e-12
ARMIJO = 1e-4
KKT_TOL = 1e-8                # spread of point divergences over the support, relative to K
ACTIVE_WEIGHT = 1e-12
POLISH_ROUNDS = 20
POLISH_SHIFT = 1e-9           # fraction of the design-space width

# ─── Logging ──────────────────────────────────────────────────────────────────

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s | %(levelname)-7s | %(message)s",
    datefmt="%H:%M:%S",
)
log = logging.getLogger("design_optimizer")

# ─── Data Models ──────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class OptimizerConfig:
    grid_n: int = GRID_N
    max_outer_iters: int = MAX_OUTER_ITERS
    stop_tol: float = STOP_TOL
    merge_tol: float | None = None
    weight_floor: float = WEIGHT_FLOOR
    refine_every: int = REFINE_EVERY
    max_halvings: int = MAX_HALVINGS
    stall_iters: int = STALL_ITERS
    weight_tol: float = WEIGHT_TOL
    weight_max_iter: int = WEIGHT_MAX_ITER
    polish: bool = True

    def __post_init__(self):
        if self.grid_n < 2:
            raise ConfigError(f"grid_n must be ≥ 2, got {self.grid_n}", origin="design_optimizer", field="grid_n")
        for name in ("max_outer_iters", "refine_every", "stall_iters", "weight_max_iter"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be ≥ 1", origin="design_optimizer", field=name)
        for name in ("stop_tol", "weight_floor", "weight_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive", origin="design_optimizer", field=name)
        if self.merge_tol is not None and not self.merge_tol > 0:
            raise ConfigError("merge_tol must be positive", origin="design_optimizer", field="merge_tol")
        if self.max_halvings < 0:
            raise ConfigError("max_halvings must be ≥ 0", origin="design_optimizer", field="max_halvings")

    def schedule(self) -> dict:
        return {
            "step_rule": "gamma_k = 1/(k+1), halved until the criterion does not decrease",
            "max_halvings": self.max_halvings,
            "refine_every": self.refine_every,
            "stop_tol": self.stop_tol,
            "merge_tol": self.merge_tol,
            "weight_floor": self.weight_floor,
            "grid_n": self.grid_n,
            "polish": "bounded Brent/golden-section on each support point" if self.polish else "off",
            "note": "schedule is an implementation choice, not part of the criterion",
        }


@dataclass(frozen=True)
class TraceStep:
    iteration: int
    value: float
    theta2_star: tuple[float, ...]
    added_point: float
    step: float
    max_sensitivity: float


@dataclass
class OptimizerTrace:
    steps: list[TraceStep] = field(default_factory=list)
    events: list[str] = field(default_factory=list)
    converged: bool = False
    stalled: bool = False
    schedule: dict = field(default_factory=dict)
    elapsed: float = 0.0

    def record(self, step: TraceStep) -> None:
        self.steps.append(step)
        log.debug(
            "iter %4d  K=%.10g  x*=%.6g  γ=%.3g  ψmax=%.3g",
            step.iteration, step.value, step.added_point, step.step, step.max_sensitivity,
        )

    def summary(self) -> dict:
        return {
            "iterations": len(self.steps),
            "converged": self.converged,
            "stalled": self.stalled,
            "first_value": self.steps[0].value if self.steps else None,
            "last_value": self.steps[-1].value if self.steps else None,
            "last_max_sensitivity": self.steps[-1].max_sensitivity if self.steps else None,
            "events": list(self.events),
            "schedule": dict(self.schedule),
        }


DEFAULT_OPTIMIZER = OptimizerConfig()

# ─── Helpers ──────────────────────────────────────────────────────────────────


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto {w ≥ 0, Σw = 1} (sort-and-threshold)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u * k > css - 1.0)[0][-1]
    tau = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def _argmax_smallest(values: np.ndarray) -> int:
    """Index of the maximum; the smallest index among values within TIE_TOL of it."""
    vmax = np.max(values)
    if not math.isfinite(vmax):
        return int(np.argmax(values))
    return int(np.nonzero(values >= vmax - TIE_TOL * max(1.0, abs(vmax)))[0][0])


def initial_design(problem: DiscriminationProblem) -> Design:
    """θ₂-dimension + 1 equally weighted, equally spaced points."""
    n = problem.model2.theta_dim + 1
    return Design.uniform(np.linspace(problem.space.domain.lo, problem.space.domain.hi, n))


def _sensitivity_max(kind, problem, report: CriterionReport, grid: np.ndarray) -> tuple[float, float]:
    vals = contributions(kind, problem, grid, report.theta2_star) - report.value
    i = _argmax_smallest(vals)
    return float(grid[i]), float(vals[i])


# ─── Weight Refinement ───────────────────────────────────────────────────────


def refine_weights(
    points,
    kind: CriterionKind,
    problem: DiscriminationProblem,
    inner_cfg: InnerConfig = DEFAULT_INNER,
    *,
    weights=None,
    warm_start=None,
    tol: float = WEIGHT_TOL,
    max_iter: int = WEIGHT_MAX_ITER,
) -> tuple[Design, CriterionReport]:
    """
    Maximise K over the weights on a fixed support by projected gradient
    ascent on the simplex. The gradient is the vector of point divergences at
    the current inner minimiser θ₂*. Steps use Armijo backtracking, doubling
    after each accepted step.
    """
    pts = np.sort(np.asarray(points, dtype=float))
    if pts.size == 0:
        raise ConfigError("refine_weights needs at least one support point", origin="design_optimizer")
    if pts.size == 1:
        design = Design((float(pts[0]),), (1.0,))
        return design, inner_minimize(kind, design, problem, inner_cfg, warm_start=warm_start)

    w = np.full(pts.size, 1.0 / pts.size) if weights is None else project_simplex(weights)
    design = Design.from_arrays(pts, w)
    report = inner_minimize(kind, design, problem, inner_cfg, warm_start=warm_start)
    g = contributions(kind, problem, pts, report.theta2_star)
    step = 0.1 / max(float(np.max(np.abs(g))), 1e-300)

    for it in range(max_iter):
        accepted = False
        while step > 1e-14 / max(float(np.max(np.abs(g))), 1e-300):
            w_new = project_simplex(w + step * g)
            cand = Design.from_arrays(pts, w_new)
            cand_report = inner_minimize(kind, cand, problem, inner_cfg,
                                         warm_start=report.theta2_star, multistart=False)
            if cand_report.value >= report.value + ARMIJO * float(g @ (w_new - w)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        gain = cand_report.value - report.value
        moved = float(np.max(np.abs(w_new - w)))
        w, design, report = w_new, cand, cand_report
        g = contributions(kind, problem, pts, report.theta2_star)
        step *= 2.0
        if moved <= tol or abs(gain) <= tol * max(abs(report.value), 1e-300):
            break
        active = w > ACTIVE_WEIGHT
        if float(np.max(g) - np.min(g[active])) <= KKT_TOL * max(abs(report.value), 1e-300):
            break

    report = inner_minimize(kind, design, problem, inner_cfg, warm_start=report.theta2_star)
    log.debug("refine_weights: %d point(s), K=%.10g after %d iteration(s)", design.size, report.value, it + 1)
    return design, report


# ─── Support Polish ──────────────────────────────────────────────────────────


def _polish_support(kind, problem, design: Design, report: CriterionReport, spacing: float) -> Design:
    """Move each support point to the local maximiser of I(x, θ₂*) within one grid spacing."""
    lo, hi = problem.space.domain.as_tuple()
    theta2 = report.theta2_star

    def neg_div(x: float) -> float:
        v = float(contributions(kind, problem, [x], theta2)[0])
        return -v if math.isfinite(v) else math.inf

    new_points = []
    for x in design.points:
        a, b = max(lo, x - spacing), min(hi, x + spacing)
        best_x, best_v = x, neg_div(x)
        res = minimize_scalar(neg_div, bounds=(a, b), method="bounded", options={"xatol": 1e-10})
        if res.success and res.fun < best_v:
            best_x, best_v = float(res.x), float(res.fun)
        for end in (a, b):
            if end in (lo, hi):
                v = neg_div(end)
                if v <= best_v:
                    best_x, best_v = end, v
        new_points.append(best_x)
    return Design.from_arrays(new_points, design.weights)


def _consolidate(kind, problem, design: Design, report: CriterionReport, cfg: OptimizerConfig,
                 inner_cfg: InnerConfig, merge_tol: float, spacing: float, *,
                 polish_rounds: int) -> tuple[Design, CriterionReport]:
    """
    Merge and drop points, refine the weights, then alternate support polish
    and weight refinement until the points stop moving. The result is kept
    only if K does not drop below the current design's full inner minimum.
    """
    base = inner_minimize(kind, design, problem, inner_cfg, warm_start=report.theta2_star)
    slack = ASCENT_SLACK * max(1.0, abs(base.value))

    cand = design.collapse(merge_tol).drop(cfg.weight_floor)
    cand, cand_report = refine_weights(cand.points, kind, problem, inner_cfg,
                                       weights=cand.weights, warm_start=base.theta2_star,
                                       tol=cfg.weight_tol, max_iter=cfg.weight_max_iter)
    width = problem.space.domain.width
    for r in range(polish_rounds):
        moved = _polish_support(kind, problem, cand, cand_report, spacing).collapse(merge_tol)
        moved, moved_report = refine_weights(moved.points, kind, problem, inner_cfg,
                                             weights=moved.weights, warm_start=cand_report.theta2_star,
                                             tol=cfg.weight_tol, max_iter=cfg.weight_max_iter)
        if moved_report.value < cand_report.value - slack:
            log.debug("polish round %d lowered K to %.10g; keeping %.10g", r + 1, moved_report.value,
                      cand_report.value)
            break
        shift = (float(np.max(np.abs(np.array(moved.points) - np.array(cand.points))))
                 if moved.size == cand.size else math.inf)
        cand, cand_report = moved, moved_report
        if shift <= POLISH_SHIFT * width:
            break

    if cand_report.value < base.value - slack:
        log.debug("consolidation lowered K from %.10g to %.10g; keeping the design", base.value,
                  cand_report.value)
        return design, base
    return cand, cand_report


# ─── Exchange Algorithm ──────────────────────────────────────────────────────


def solve_design(
    kind: CriterionKind,
    problem: DiscriminationProblem,
    cfg: OptimizerConfig = DEFAULT_OPTIMIZER,
    inner_cfg: InnerConfig = DEFAULT_INNER,
    *,
    start: Design | None = None,
) -> tuple[Design, CriterionReport, OptimizerTrace]:
    """
    Maximin-optimal design for *kind* by the exchange loop described above.

    Warns:
        StallWarning: the criterion stopped improving, or the iteration
            cap was reached, before max ψ fell below tolerance.
    """
    problem.require(kind)
    t0 = time.time()
    space = problem.space
    grid = space.grid(cfg.grid_n)
    spacing = space.domain.width / (cfg.grid_n - 1)
    merge_tol = cfg.merge_tol if cfg.merge_tol is not None else MERGE_FRACTION * space.domain.width

    trace = OptimizerTrace(schedule=cfg.schedule() | {"merge_tol": merge_tol})
    design = start if start is not None else initial_design(problem)
    report = inner_minimize(kind, design, problem, inner_cfg)
    log.info("Solving %s design: %d-point start, K=%.6g", kind.value, design.size, report.value)

    since_improvement = 0
    for k in range(1, cfg.max_outer_iters + 1):
        x_star, psi_max = _sensitivity_max(kind, problem, report, grid)
        if psi_max <= cfg.stop_tol * report.value:
            full = inner_minimize(kind, design, problem, inner_cfg, warm_start=report.theta2_star)
            x_star, psi_max = _sensitivity_max(kind, problem, full, grid)
            report = full
            if psi_max <= cfg.stop_tol * report.value:
                trace.record(TraceStep(k, report.value, report.theta2_star, x_star, 0.0, psi_max))
                trace.converged = True
                break

        gamma = 1.0 / (k + 1)
        accepted = None
        for _ in range(cfg.max_halvings + 1):
            cand = design.mix(x_star, gamma)
            cand_report = inner_minimize(kind, cand, problem, inner_cfg,
                                         warm_start=report.theta2_star, multistart=False)
            if cand_report.value >= report.value - ASCENT_SLACK * max(1.0, abs(report.value)):
                accepted = (cand, cand_report)
                break
            gamma *= 0.5

        previous = report.value
        if accepted is None:
            gamma = 0.0
        else:
            design, report = accepted
        trace.record(TraceStep(k, report.value, report.theta2_star, x_star, gamma, psi_max))

        if report.value - previous < STALL_TOL * max(1.0, abs(previous)):
            since_improvement += 1
        else:
            since_improvement = 0

        if k % cfg.refine_every == 0:
            before = design.size
            design, report = _consolidate(kind, problem, design, report, cfg, inner_cfg, merge_tol, spacing,
                                          polish_rounds=1 if cfg.polish else 0)
            trace.events.append(f"iter {k}: collapsed {before} -> {design.size} points, K={report.value:.10g}")
            log.info("Iter %d: %d support point(s), K=%.10g", k, design.size, report.value)
            x_star, psi_max = _sensitivity_max(kind, problem, report, grid)
            if psi_max <= cfg.stop_tol * report.value:
                trace.record(TraceStep(k, report.value, report.theta2_star, x_star, 0.0, psi_max))
                trace.events.append(f"iter {k}: max ψ={psi_max:.3g} within tolerance after refinement")
                trace.converged = True
                break

        if since_improvement >= cfg.stall_iters:
            trace.stalled = True
            msg = (f"{kind.value}: no improvement for {cfg.stall_iters} iterations "
                   f"(max ψ={psi_max:.3g}, K={report.value:.6g})")
            log.warning(msg)
            warnings.warn(msg, StallWarning, stacklevel=2)
            break

    design, report = _consolidate(kind, problem, design, report, cfg, inner_cfg, merge_tol, spacing,
                                  polish_rounds=POLISH_ROUNDS if cfg.polish else 0)
    x_star, psi_max = _sensitivity_max(kind, problem, report, grid)
    if not trace.converged and psi_max <= cfg.stop_tol * report.value:
        trace.converged = True
        trace.events.append(f"final: max ψ={psi_max:.3g} within tolerance after polishing")
    if not (trace.converged or trace.stalled):
        msg = (f"{kind.value}: iteration cap of {cfg.max_outer_iters} reached before the stop rule "
               f"(max ψ={psi_max:.3g} at x={x_star:.6g}, K={report.value:.6g})")
        trace.events.append(f"final: {msg}")
        log.warning(msg)
        warnings.warn(msg, StallWarning, stacklevel=2)

    trace.elapsed = time.time() - t0
    log.info("Solved %s design in %.1fs: %s", kind.value, trace.elapsed,
             ", ".join(f"{p:.4f}:{w:.4f}" for p, w in zip(design.points, design.weights)))
    return design, report, trace


# ─── Self-Test ────────────────────────────────────────────────────────────────


def _self_test():
    from models import DesignSpace, ModelSpec, parse_mean
    from quadrature import Interval

    log.info("Running design optimizer self-test …")
    v = project_simplex([0.5, 0.5, 0.5])
    assert np.allclose(v, [1 / 3] * 3)
    assert np.allclose(project_simplex([2.0, 0.0]), [1.0, 0.0])

    problem = DiscriminationProblem(
        mean1=parse_mean("p1 + p2*x + p3*x^2"),
        theta1=(0.0, 0.0, 1.0),
        model2=ModelSpec(parse_mean("p1 + p2*x"), 2, (Interval(-10, 10), Interval(-10, 10))),
        space=DesignSpace(Interval(-1.0, 1.0)),
    )
    design, report, trace = solve_design(CriterionKind.T, problem, OptimizerConfig(grid_n=101))
    assert np.allclose(design.points, [-1, 0, 1], atol=1e-3), design
    assert np.allclose(design.weights, [0.25, 0.5, 0.25], atol=1e-3), design
    assert abs(report.value - 0.25) < 1e-6
    log.info("  solve_design … OK (%d iterations)", len(trace.steps))
    log.info("Design optimizer self-test PASSED.")


# ─── Entry Point ──────────────────────────────────────────────────────────────

if __name__ == "__main__":
    if "--test" in sys.argv:
        _self_test()
        sys.exit(0)
    print("Usage:  python design_optimizer.py --test")
    sys.exit(1)

"""
Criteria
==========
Design criteria for discriminating a fixed model η₁(x, θ̄₁) from a rival
η₂(x, θ₂), each of the form

    K(ξ) = inf over θ₂ in Θ₂ of Σᵢ ωᵢ · I(xᵢ, θ₂)

with the point divergence I depending on the criterion:

    T         (η₁ − η₂)²
    KLNORMAL  (η₁ − η₂)² / v₂²(x, θ₂)
    KL        ∫ f₁ log(f₁/f₂) dy             (both densities fully specified)
    SKL_A     inf over f₂ with mean η₂        (ratio tilt of f₁)
    SKL_B     inf over f₁ with mean η₁        (exponential tilt of f₂)

The infimum is taken by multistart Nelder–Mead inside the Θ₂ box, started
from scrambled Sobol points, the caller's warm start and, for the KL-type
criteria, the T-criterion minimiser of the same design.

Requirements:
    pip install numpy scipy

Usage:
    python criteria.py --test
"""

from __future__ import annotations

import os
import sys
import math
import time
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import Bounds, minimize
from scipy.stats import qmc

from divergence import PointDivergence, density_curve, kl_point, skl_a_point, skl_b_point
from errors import ConfigError, DomainError, InnerNonConvergent, NonUniqueMinimum, ZeroReference
from lambda_solver import DEFAULT_SOLVER, SolverConfig
from models import DensityFamily, DesignSpace, MeanExpr, ModelSpec, PointDensity

# ─── Configuration ────────────────────────────────────────────────────────────

N_STARTS = 16
DEFAULT_SEED = int(os.getenv("DISCRIMAX_SEED", "0"))
THREADS = max(1, int(os.getenv("DISCRIMAX_THREADS", "1")))
SIMPLEX_XATOL = 1e-9
SIMPLEX_FATOL = 1e-12
SIMPLEX_SCALE = 0.05          # initial simplex edge, fraction of box width
MAXFEV_PER_DIM = 1000
TIE_TOL = 1e-8                # starts whose values agree this closely "tie"
DISTINCT_TOL = 1e-3           # … and count as different minima past this relative θ₂ gap
PENALTY = 1e6                 # objective floor for θ₂ with an empty admissible class
WEIGHT_SUM_TOL = 1e-12
RENORMALIZE_SILENT = 1e-9
RENORMALIZE_WARN = 1e-6
DUPLICATE_TOL = 1e-12

KL_CONVENTION = (
    "natural log; KL and SKL values are exact KL divergences; KLNORMAL is "
    "sum w (eta1 - eta2)^2 / v2^2 without the 1/2, so with a normal f2 "
    "SKL_B = 0.5 * KLNORMAL"
)

# ─── Logging ──────────────────────────────────────────────────────────────────

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s | %(levelname)-7s | %(message)s",
    datefmt="%H:%M:%S",
)
log = logging.getLogger("criteria")

# ─── Data Models ──────────────────────────────────────────────────────────────


class CriterionKind(str, Enum):
    T = "T"
    KLNORMAL = "KLNORMAL"
    KL = "KL"
    SKL_A = "SKL_A"
    SKL_B = "SKL_B"

    @property
    def needs_density1(self) -> bool:
        return self in (CriterionKind.KL, CriterionKind.SKL_A)

    @property
    def needs_density2(self) -> bool:
        return self in (CriterionKind.KL, CriterionKind.SKL_B, CriterionKind.KLNORMAL)

    @property
    def kl_type(self) -> bool:
        return self in (CriterionKind.KL, CriterionKind.SKL_A, CriterionKind.SKL_B)

    @classmethod
    def parse(cls, tag: str) -> "CriterionKind":
        try:
            return cls(tag.strip().upper())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown criterion {tag!r}; expected one of {names}", field="tag") from None


@dataclass(frozen=True)
class Design:
    """Approximate design: distinct ascending support points with positive weights summing to 1."""

    points: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        wts = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)
        if not pts or len(pts) != len(wts):
            raise ConfigError(f"design needs matching non-empty points/weights ({len(pts)} vs {len(wts)})",
                              origin="criteria")
        if not all(math.isfinite(p) for p in pts):
            raise ConfigError("design points must be finite", origin="criteria")
        if any(not (w > 0 and math.isfinite(w)) for w in wts):
            raise ConfigError(f"design weights must be positive, got {wts}", origin="criteria")
        if abs(math.fsum(wts) - 1.0) > WEIGHT_SUM_TOL:
            raise ConfigError(f"design weights sum to {math.fsum(wts):.15g}, not 1", origin="criteria")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ConfigError(f"design points must be distinct and ascending, got {pts}", origin="criteria")

    # ── construction ──

    @classmethod
    def from_arrays(cls, points, weights) -> "Design":
        """Sort, merge coincident points, drop non-positive weights and renormalise."""
        pts = np.asarray(points, dtype=float).ravel()
        wts = np.asarray(weights, dtype=float).ravel()
        if pts.size != wts.size:
            raise ConfigError(f"{pts.size} points but {wts.size} weights", origin="criteria")
        keep = wts > 0
        pts, wts = pts[keep], wts[keep]
        if pts.size == 0:
            raise ConfigError("design has no positive weight", origin="criteria")
        order = np.argsort(pts, kind="stable")
        pts, wts = pts[order], wts[order]
        merged_p, merged_w = [pts[0]], [wts[0]]
        for p, w in zip(pts[1:], wts[1:]):
            if p - merged_p[-1] <= DUPLICATE_TOL * max(1.0, abs(p)):
                merged_w[-1] += w
            else:
                merged_p.append(p)
                merged_w.append(w)
        wsum = math.fsum(merged_w)
        return cls(tuple(merged_p), tuple(w / wsum for w in merged_w))

    @classmethod
    def from_user(cls, points, weights, space: DesignSpace | None = None) -> "Design":
        """
        Validate a user-supplied design. Weight sums within 1e-9 of 1 are
        renormalised silently, within 1e-6 with a warning; anything else is
        rejected.
        """
        pts = [float(p) for p in points]
        wts = [float(w) for w in weights]
        if not pts or len(pts) != len(wts):
            raise ConfigError(f"design needs matching non-empty points/weights ({len(pts)} vs {len(wts)})",
                              origin="design")
        if any(not math.isfinite(v) for v in pts + wts):
            raise ConfigError("design values must be finite", origin="design")
        if any(w <= 0 for w in wts):
            raise ConfigError(f"design weights must be positive, got {wts}", origin="design")
        total = math.fsum(wts)
        if abs(total - 1.0) > RENORMALIZE_WARN:
            raise ConfigError(f"design weights sum to {total:.9g}, not 1", origin="design")
        if abs(total - 1.0) > RENORMALIZE_SILENT:
            log.warning("Design weights sum to %.12g; renormalising", total)
        if len(set(pts)) != len(pts):
            raise ConfigError(f"design points repeat: {pts}", origin="design")
        if space is not None:
            lo, hi = space.domain.as_tuple()
            bad = [p for p in pts if not lo <= p <= hi]
            if bad:
                raise ConfigError(f"design points {bad} outside the design space [{lo:g}, {hi:g}]",
                                  origin="design")
        return cls.from_arrays(pts, wts)

    @classmethod
    def uniform(cls, points) -> "Design":
        pts = np.asarray(points, dtype=float)
        return cls.from_arrays(pts, np.full(pts.size, 1.0 / pts.size))

    # ── operations ──

    @property
    def size(self) -> int:
        return len(self.points)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.points), np.array(self.weights)

    def mix(self, x: float, gamma: float) -> "Design":
        """(1 − γ)·ξ + γ·δₓ."""
        pts, wts = self.as_arrays()
        return Design.from_arrays(np.append(pts, x), np.append((1.0 - gamma) * wts, gamma))

    def collapse(self, merge_tol: float) -> "Design":
        """Merge runs of points closer than merge_tol into their weighted centre."""
        pts, wts = self.as_arrays()
        groups: list[tuple[float, float]] = []
        for p, w in zip(pts, wts):
            if groups and p - groups[-1][0] <= merge_tol:
                gp, gw = groups[-1]
                groups[-1] = ((gp * gw + p * w) / (gw + w), gw + w)
            else:
                groups.append((p, w))
        return Design.from_arrays([g[0] for g in groups], [g[1] for g in groups])

    def drop(self, floor: float) -> "Design":
        """Remove points with weight below floor (the heaviest point always survives)."""
        pts, wts = self.as_arrays()
        keep = wts >= floor
        if not np.any(keep):
            keep[np.argmax(wts)] = True
        return Design.from_arrays(pts[keep], wts[keep])

    def summary(self) -> dict:
        return {"points": list(self.points), "weights": list(self.weights)}


@dataclass(frozen=True)
class DiscriminationProblem:
    """Everything a criterion needs: the fixed model, the rival, densities and the design space."""

    mean1: MeanExpr
    theta1: tuple[float, ...]
    model2: ModelSpec
    space: DesignSpace
    density1: DensityFamily | None = None
    density2: DensityFamily | None = None
    solver: SolverConfig = DEFAULT_SOLVER

    def __post_init__(self):
        object.__setattr__(self, "theta1", tuple(float(t) for t in self.theta1))
        if len(self.theta1) != self.mean1.arity:
            raise ConfigError(
                f"theta1 has {len(self.theta1)} value(s) but {self.mean1.source!r} uses {self.mean1.arity}",
                field="theta",
            )

    def require(self, kind: CriterionKind) -> None:
        if kind.needs_density1 and self.density1 is None:
            raise ConfigError(f"criterion {kind.value} needs [density1]", field="density1")
        if kind.needs_density2 and self.density2 is None:
            raise ConfigError(f"criterion {kind.value} needs [density2]", field="density2")
        if kind is CriterionKind.SKL_A and not self.density1.kind.bounded:
            raise ConfigError("SKL_A needs a bounded (truncated) density1", field="density1.kind")

    def eta1(self, x):
        return self.mean1(x, self.theta1)

    def eta2(self, x, theta2):
        return self.model2.mean(x, theta2)

    def f1_at(self, x: float) -> PointDensity:
        return self.density1.at(x, self.theta1, self.mean1)

    def f2_at(self, x: float, theta2) -> PointDensity:
        return self.density2.at(x, theta2, self.model2.mean)


@dataclass(frozen=True)
class InnerConfig:
    n_starts: int = N_STARTS
    seed: int = DEFAULT_SEED
    xatol: float = SIMPLEX_XATOL
    fatol: float = SIMPLEX_FATOL
    simplex_scale: float = SIMPLEX_SCALE
    maxfev_per_dim: int = MAXFEV_PER_DIM
    threads: int = THREADS
    t_start: bool = True

    def __post_init__(self):
        if self.n_starts < 1:
            raise ConfigError(f"n_starts must be ≥ 1, got {self.n_starts}", origin="criteria", field="n_starts")
        if not 0 < self.simplex_scale <= 1:
            raise ConfigError("simplex_scale must be in (0, 1]", origin="criteria", field="simplex_scale")
        if self.threads < 1:
            raise ConfigError("threads must be ≥ 1", origin="criteria", field="threads")


DEFAULT_INNER = InnerConfig()


@dataclass(frozen=True)
class StartResult:
    start: tuple[float, ...]
    theta: tuple[float, ...]
    value: float
    converged: bool


@dataclass(frozen=True)
class CriterionReport:
    kind: CriterionKind
    value: float
    theta2_star: tuple[float, ...]
    point_contributions: tuple[float, ...]
    inner_multistart_trace: tuple[StartResult, ...] = ()
    details: tuple[PointDivergence, ...] = field(default=(), repr=False)
    qualifiers: tuple[str, ...] = ()
    convention: str = KL_CONVENTION

    def summary(self) -> dict:
        return {
            "criterion": self.kind.value,
            "value": self.value,
            "theta2_star": list(self.theta2_star),
            "point_contributions": list(self.point_contributions),
            "starts": len(self.inner_multistart_trace),
            "converged_starts": sum(1 for s in self.inner_multistart_trace if s.converged),
            "qualifiers": list(self.qualifiers),
            "convention": self.convention,
        }


# ─── Point Divergences ───────────────────────────────────────────────────────


def point_divergence(kind: CriterionKind, problem: DiscriminationProblem, x: float, theta2) -> PointDivergence:
    """I(x, θ₂) for one design point; +∞ (with a distance) when θ₂ is infeasible at x."""
    eta1 = float(problem.eta1(x))
    eta2 = float(problem.eta2(x, theta2))
    if kind is CriterionKind.T:
        return PointDivergence(x, (eta1 - eta2) ** 2, eta1, eta2)
    if kind is CriterionKind.KLNORMAL:
        v2 = problem.density2.variance_at(x, theta2)
        return PointDivergence(x, (eta1 - eta2) ** 2 / v2, eta1, eta2)
    if kind is CriterionKind.SKL_A:
        return skl_a_point(problem.f1_at(x), eta2, problem.solver, x=x)
    try:
        f2 = problem.f2_at(x, theta2)
    except DomainError:
        return PointDivergence(x, math.inf, eta1, eta2, None, max(-eta2, 0.0))
    if kind is CriterionKind.SKL_B:
        return skl_b_point(f2, eta1, problem.solver, x=x)
    return PointDivergence(x, kl_point(problem.f1_at(x), f2, problem.solver.quad_tol), eta1, eta2)


def contributions(kind: CriterionKind, problem: DiscriminationProblem, xs, theta2) -> np.ndarray:
    """Point divergences on an array of design points (vectorised for T and KLNORMAL)."""
    xv = np.asarray(xs, dtype=float)
    if kind is CriterionKind.T:
        return (problem.eta1(xv) - problem.eta2(xv, theta2)) ** 2
    if kind is CriterionKind.KLNORMAL:
        v2 = problem.density2.variance(xv, theta2)
        return (problem.eta1(xv) - problem.eta2(xv, theta2)) ** 2 / v2
    return np.array([point_divergence(kind, problem, float(x), theta2).value for x in xv])


class _Objective:
    """θ₂ ↦ Σ ωᵢ I(xᵢ, θ₂) with a per-evaluation cache and an infeasibility penalty."""

    def __init__(self, kind: CriterionKind, design: Design, problem: DiscriminationProblem):
        self.kind = kind
        self.design = design
        self.problem = problem
        self.weights = np.array(design.weights)
        self.cache: dict[tuple[float, tuple[float, ...]], PointDivergence] = {}
        self.evals = 0

    def details(self, theta2) -> list[PointDivergence]:
        key_t = tuple(float(t) for t in theta2)
        out = []
        for x in self.design.points:
            key = (x, key_t)
            pd = self.cache.get(key)
            if pd is None:
                pd = point_divergence(self.kind, self.problem, x, key_t)
                self.cache[key] = pd
            out.append(pd)
        return out

    def __call__(self, theta2) -> float:
        self.evals += 1
        if self.kind in (CriterionKind.T, CriterionKind.KLNORMAL):
            return float(self.weights @ contributions(self.kind, self.problem, self.design.points, theta2))
        pds = self.details(theta2)
        if all(pd.feasible for pd in pds):
            return float(sum(w * pd.value for w, pd in zip(self.weights, pds)))
        dist2 = sum(w * pd.infeasibility ** 2 for w, pd in zip(self.weights, pds) if not pd.feasible)
        return PENALTY * (1.0 + dist2)


# ─── Criterion Evaluation ────────────────────────────────────────────────────


def eval_at_theta2(kind: CriterionKind, design: Design, problem: DiscriminationProblem, theta2) -> float:
    """Σ ωᵢ I(xᵢ, θ₂); +∞ when θ₂ is infeasible at any support point."""
    problem.require(kind)
    vals = contributions(kind, problem, design.points, theta2)
    return float(np.dot(design.weights, vals))


def _sobol_starts(model2: ModelSpec, n: int, seed: int) -> np.ndarray:
    sampler = qmc.Sobol(d=model2.theta_dim, scramble=True, seed=seed)
    return qmc.scale(sampler.random(n), model2.lower, model2.upper)


def _local_search(obj: _Objective, x0: np.ndarray, model2: ModelSpec, cfg: InnerConfig) -> StartResult:
    lower, upper = model2.lower, model2.upper
    x0 = np.clip(np.asarray(x0, dtype=float), lower, upper)
    step = cfg.simplex_scale * (upper - lower)
    simplex = [x0]
    for i in range(x0.size):
        v = x0.copy()
        v[i] = x0[i] + step[i] if x0[i] + step[i] <= upper[i] else x0[i] - step[i]
        simplex.append(v)
    res = minimize(
        obj,
        x0,
        method="Nelder-Mead",
        bounds=Bounds(lower, upper),
        options={
            "initial_simplex": np.array(simplex),
            "xatol": cfg.xatol,
            "fatol": cfg.fatol,
            "maxfev": cfg.maxfev_per_dim * x0.size,
        },
    )
    theta = np.clip(res.x, lower, upper)
    value = obj(theta)
    return StartResult(tuple(x0), tuple(float(t) for t in theta), value, bool(res.success))


def inner_minimize(
    kind: CriterionKind,
    design: Design,
    problem: DiscriminationProblem,
    cfg: InnerConfig = DEFAULT_INNER,
    *,
    warm_start=None,
    multistart: bool = True,
) -> CriterionReport:
    """
    inf over θ₂ of Σ ωᵢ I(xᵢ, θ₂) by multistart Nelder–Mead in the Θ₂ box.

    With ``multistart=False`` only the warm start is refined (the exchange
    loop uses this between full restarts).

    Raises:
        InnerNonConvergent: no start reached a feasible θ₂.
    Warns:
        NonUniqueMinimum: two starts tie in value at clearly different θ₂.
    """
    problem.require(kind)
    model2 = problem.model2

    starts: list[np.ndarray] = []
    if warm_start is not None:
        starts.append(np.asarray(warm_start, dtype=float))
    if multistart or not starts:
        starts.extend(_sobol_starts(model2, cfg.n_starts, cfg.seed))
        if kind.kl_type and cfg.t_start:
            t_cfg = InnerConfig(cfg.n_starts, cfg.seed, cfg.xatol, cfg.fatol, cfg.simplex_scale,
                                cfg.maxfev_per_dim, cfg.threads, t_start=False)
            t_report = inner_minimize(CriterionKind.T, design, problem, t_cfg)
            starts.append(np.array(t_report.theta2_star))

    def run(x0: np.ndarray) -> StartResult:
        return _local_search(_Objective(kind, design, problem), x0, model2, cfg)

    if cfg.threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(x0) for x0 in starts]

    feasible = [r for r in results if math.isfinite(r.value) and r.value < PENALTY]
    if not feasible:
        raise InnerNonConvergent(
            f"{kind.value}: none of {len(results)} start(s) reached a feasible θ₂", origin="criteria"
        )
    best = min(feasible, key=lambda r: r.value)
    qualifiers: list[str] = []
    if not any(r.converged for r in feasible):
        qualifiers.append("inner-not-converged")
        (log.warning if multistart else log.debug)(
            "%s: none of %d start(s) met the simplex tolerances; using the best feasible value %.6g",
            kind.value, len(results), best.value,
        )

    theta_best = np.array(best.theta)
    scale = max(float(np.linalg.norm(theta_best)), 1.0)
    for r in feasible:
        if abs(r.value - best.value) <= TIE_TOL * max(1.0, abs(best.value)) and \
                np.linalg.norm(np.array(r.theta) - theta_best) > DISTINCT_TOL * scale:
            msg = (f"{kind.value}: inner minimum is not unique "
                   f"(θ₂={np.round(theta_best, 6).tolist()} vs {np.round(r.theta, 6).tolist()})")
            log.warning(msg)
            warnings.warn(msg, NonUniqueMinimum, stacklevel=2)
            qualifiers.append("non-unique-theta2")
            break

    obj = _Objective(kind, design, problem)
    details = obj.details(best.theta)
    contrib = tuple(float(pd.value) for pd in details)
    value = float(math.fsum(w * c for w, c in zip(design.weights, contrib)))
    return CriterionReport(
        kind=kind,
        value=value,
        theta2_star=best.theta,
        point_contributions=contrib,
        inner_multistart_trace=tuple(results),
        details=tuple(details),
        qualifiers=tuple(qualifiers),
    )


def efficiency(
    kind: CriterionKind,
    design: Design,
    reference: Design,
    problem: DiscriminationProblem,
    cfg: InnerConfig = DEFAULT_INNER,
) -> float:
    """K(design) / K(reference) under one criterion."""
    ref = inner_minimize(kind, reference, problem, cfg).value
    if not ref > 0:
        raise ZeroReference(f"{kind.value} value of the reference design is {ref:g}", origin="criteria")
    return inner_minimize(kind, design, problem, cfg).value / ref


def round_design(design: Design, n: int) -> list[int]:
    """Naive multiplier rounding: ⌊n·ωᵢ⌋ plus the leftover to the largest remainders."""
    if n < 1:
        raise ConfigError(f"n must be ≥ 1, got {n}", field="n")
    raw = n * np.array(design.weights)
    counts = np.floor(raw).astype(int)
    leftover = n - int(counts.sum())
    for i in np.argsort(-(raw - counts), kind="stable")[:leftover]:
        counts[i] += 1
    return counts.tolist()


def least_favorable_curves(
    kind: CriterionKind,
    problem: DiscriminationProblem,
    design: Design,
    theta2,
    n_y: int = 201,
) -> list[dict]:
    """Given and least-favourable densities at each support point for SKL_A / SKL_B."""
    problem.require(kind)
    rows: list[dict] = []
    for x in design.points:
        if kind is CriterionKind.SKL_A:
            rows.extend(density_curve(problem.f1_at(x), float(problem.eta2(x, theta2)), "a",
                                      problem.solver, n_y, x=x))
        elif kind is CriterionKind.SKL_B:
            rows.extend(density_curve(problem.f2_at(x, theta2), float(problem.eta1(x)), "b",
                                      problem.solver, n_y, x=x))
        else:
            raise ConfigError(f"least-favourable densities exist only for SKL_A and SKL_B, not {kind.value}",
                              field="tag")
    return rows


# ─── Self-Test ────────────────────────────────────────────────────────────────


def _self_test():
    from models import parse_mean
    from quadrature import Interval

    log.info("Running criteria self-test …")
    t0 = time.time()
    problem = DiscriminationProblem(
        mean1=parse_mean("p1 + p2*x + p3*x^2"),
        theta1=(0.0, 0.0, 1.0),
        model2=ModelSpec(parse_mean("p1 + p2*x"), 2, (Interval(-10, 10), Interval(-10, 10))),
        space=DesignSpace(Interval(-1.0, 1.0)),
    )
    design = Design.from_arrays([-1.0, 0.0, 1.0], [0.25, 0.5, 0.25])
    report = inner_minimize(CriterionKind.T, design, problem)
    assert abs(report.value - 0.25) < 1e-8, report.value
    assert np.allclose(report.theta2_star, (0.5, 0.0), atol=1e-4)
    log.info("  inner_minimize … OK (value %.10f, %.1fs)", report.value, time.time() - t0)

    assert round_design(design, 10) == [3, 5, 2]
    log.info("Criteria self-test PASSED.")


# ─── Entry Point ──────────────────────────────────────────────────────────────

if __name__ == "__main__":
    if "--test" in sys.argv:
        _self_test()
        sys.exit(0)
    print("Usage:  python criteria.py --test")
    sys.exit(1)

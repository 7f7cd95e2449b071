"""
Quadrature Backend
====================
Deterministic integration of smooth integrands over finite intervals.
Every ∫ … dy in the solver (normalising constants, λ equations, KL
divergences) goes through integrate().

The rule is Gauss–Legendre of fixed order per panel; panels are bisected
adaptively until the difference between a panel's estimate and the sum of its
two halves is within the panel's share of the tolerance: the larger of its
length fraction and its own ∫|f| fraction, so that peaked panels are held
to a relative rather than an absolute standard.

Integrands are vectorised: f receives a 1-D numpy array of abscissae and
must return an array of the same shape.

Requirements:
    pip install numpy

Usage:
    python quadrature.py --test     # offline self-test
"""

from __future__ import annotations

import sys
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from errors import NonConvergent

# ─── Configuration ────────────────────────────────────────────────────────────

PANEL_ORDER = 32          # Gauss–Legendre points per panel
DEFAULT_TOL = 1e-10       # relative to ∫|f|
MAX_PANELS = 2 ** 14
MIN_ORDER, MAX_ORDER = 2, 128
NEWTON_MAX_ITER = 100
ROUNDOFF = 50.0 * np.finfo(float).eps

# ─── Logging ──────────────────────────────────────────────────────────────────

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s | %(levelname)-7s | %(message)s",
    datefmt="%H:%M:%S",
)
log = logging.getLogger("quadrature")

Integrand = Callable[[np.ndarray], np.ndarray]

# ─── Data Models ──────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Interval:
    """Closed finite interval [lo, hi] with lo < hi."""

    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError(f"Interval bounds must be finite, got [{lo}, {hi}]")
        if not lo < hi:
            raise ValueError(f"Interval needs lo < hi, got [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, y: float, *, strict: bool = False) -> bool:
        if strict:
            return self.lo < y < self.hi
        return self.lo <= y <= self.hi

    def as_tuple(self) -> tuple[float, float]:
        return (self.lo, self.hi)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes in (−1, 1), strictly increasing, with positive weights summing to 2."""

    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    order: int = 0

    def __post_init__(self):
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)


# ─── Gauss–Legendre Rule ─────────────────────────────────────────────────────


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> QuadratureRule:
    """
    Nodes are roots of P_order found by Newton iteration from the Chebyshev
    guesses cos(π(i − ¼)/(n + ½)); weights are 2 / ((1 − x²) P'_n(x)²).
    """
    n = int(order)
    if not MIN_ORDER <= n <= MAX_ORDER:
        raise ValueError(f"Gauss–Legendre order must be in [{MIN_ORDER}, {MAX_ORDER}], got {order}")

    x = np.cos(np.pi * (np.arange(1, n + 1) - 0.25) / (n + 0.5))

    def legendre_and_derivative(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p_prev = np.ones_like(z)
        p = z.copy()
        for k in range(2, n + 1):
            p_prev, p = p, ((2 * k - 1) * z * p - (k - 1) * p_prev) / k
        dp = n * (z * p - p_prev) / (z * z - 1.0)
        return p, dp

    for _ in range(NEWTON_MAX_ITER):
        p, dp = legendre_and_derivative(x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break

    _, dp = legendre_and_derivative(x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)

    # Chebyshev guesses run from +1 down to −1
    order_idx = np.argsort(x)
    return QuadratureRule(nodes=x[order_idx].copy(), weights=w[order_idx].copy(), order=n)


# ─── Adaptive Integration ────────────────────────────────────────────────────


def _panel_sums(f: Integrand, a: np.ndarray, b: np.ndarray, rule: QuadratureRule):
    """Apply *rule* on each panel [a_i, b_i]; returns (∫f, ∫|f|) per panel."""
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    y = mid[:, None] + half[:, None] * rule.nodes[None, :]
    vals = np.asarray(f(y.ravel()), dtype=float).reshape(y.shape)
    if not np.all(np.isfinite(vals)):
        raise NonConvergent("integrand is not finite on the integration interval", origin="quadrature")
    est = half * (vals @ rule.weights)
    est_abs = half * (np.abs(vals) @ rule.weights)
    return est, est_abs


def integrate(
    f: Integrand,
    iv: Interval,
    tol: float = DEFAULT_TOL,
    *,
    order: int = PANEL_ORDER,
    max_panels: int = MAX_PANELS,
) -> float:
    """
    Adaptive Gauss–Legendre integral of *f* over *iv*.

    A panel is accepted when |I(panel) − I(left) − I(right)| is within its
    share of tol·∫|f| (length or mass, whichever is larger). Accepted panels
    contribute the refined (two-half) estimate.

    Raises:
        NonConvergent: the panel count exceeds *max_panels*, or f is not finite.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    rule = gauss_legendre(order)
    total_len = iv.width
    min_width = 1e-15 * max(total_len, abs(iv.lo), abs(iv.hi))

    a = np.array([iv.lo])
    b = np.array([iv.hi])
    coarse, _ = _panel_sums(f, a, b, rule)

    result = 0.0
    result_abs = 0.0
    n_panels = 1

    while a.size:
        m = 0.5 * (a + b)
        left, left_abs = _panel_sums(f, a, m, rule)
        right, right_abs = _panel_sums(f, m, b, rule)
        fine = left + right
        fine_abs = left_abs + right_abs
        err = np.abs(fine - coarse)

        scale = max(result_abs + float(np.sum(fine_abs)), np.finfo(float).tiny)
        share = tol * np.maximum(scale * (b - a) / total_len, fine_abs)
        # near-singular panels stall at roundoff before reaching their share
        floor = ROUNDOFF * fine_abs
        done = (err <= share) | (err <= floor) | ((b - a) <= min_width)

        result += float(np.sum(fine[done]))
        result_abs += float(np.sum(fine_abs[done]))

        keep = ~done
        if not np.any(keep):
            break
        n_panels += int(np.sum(keep))
        if n_panels > max_panels:
            raise NonConvergent(
                f"quadrature on [{iv.lo:.6g}, {iv.hi:.6g}] exceeded {max_panels} panels "
                f"(residual error {float(np.sum(err[keep])):.3g})",
                origin="quadrature",
            )
        a_k, m_k, b_k = a[keep], m[keep], b[keep]
        a = np.concatenate([a_k, m_k])
        b = np.concatenate([m_k, b_k])
        coarse = np.concatenate([left[keep], right[keep]])

    log.debug("integrate [%.6g, %.6g]: %d panels", iv.lo, iv.hi, n_panels)
    return result


# ─── Self-Test ────────────────────────────────────────────────────────────────


def _self_test():
    log.info("Running quadrature self-test …")

    r2 = gauss_legendre(2)
    assert np.allclose(r2.nodes, [-1 / np.sqrt(3), 1 / np.sqrt(3)], atol=1e-15)
    assert np.allclose(r2.weights, [1.0, 1.0], atol=1e-15)
    r3 = gauss_legendre(3)
    assert np.allclose(r3.nodes, [-np.sqrt(0.6), 0.0, np.sqrt(0.6)], atol=1e-15)
    log.info("  gauss_legendre … OK")

    val = integrate(lambda y: np.ones_like(y), Interval(-3.0, 3.0))
    assert abs(val - 6.0) < 1e-12
    val = integrate(np.exp, Interval(0.0, 1.0))
    assert abs(val - (np.e - 1.0)) < 1e-12
    log.info("  integrate … OK")

    log.info("Quadrature self-test PASSED.")


# ─── Entry Point ──────────────────────────────────────────────────────────────

if __name__ == "__main__":
    if "--test" in sys.argv:
        _self_test()
        sys.exit(0)
    print("Usage:  python quadrature.py --test")
    sys.exit(1)

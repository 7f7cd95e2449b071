"""
Models: Mean Functions, Parameter Boxes, Density Families
============================================================
Mean functions η(x, θ) are written in a small expression language and parsed
by recursive descent into an immutable AST, which is compiled to a numpy
closure. Conditional densities f(y, x, θ) are frozen at a design point into
PointDensity objects that the λ-solver, divergence and criteria layers share.

Grammar (whitespace insignificant):

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | factor
    factor := base ('^' unary)?
    base   := number | 'x' | 'p' digit+ | func '(' expr ')' | '(' expr ')'
    func   := 'exp' | 'log' | 'sqrt'

Requirements:
    pip install numpy scipy

Usage:
    python models.py --test
"""

from __future__ import annotations

import re
import sys
import math
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Union

import numpy as np
from scipy.special import erf, ndtr

from errors import (
    ArityError,
    DomainError,
    InvalidVariance,
    OutOfSupport,
    ParseError,
    UnboundedSupport,
)
from quadrature import Interval

# ─── Configuration ────────────────────────────────────────────────────────────

DEFAULT_GRID_N = 401
SQRT_2PI = math.sqrt(2.0 * math.pi)

# Acklam's rational approximation to Φ⁻¹ (|err| ≲ 1.2e-9 before refinement)
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425

# ─── Logging ──────────────────────────────────────────────────────────────────

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s | %(levelname)-7s | %(message)s",
    datefmt="%H:%M:%S",
)
log = logging.getLogger("models")

# ─── Expression AST ───────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str = "x"


@dataclass(frozen=True)
class Param:
    index: int  # 1-based


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Param, Neg, BinOp, Call]

FUNCTIONS: dict[str, Callable] = {"exp": np.exp, "log": np.log, "sqrt": np.sqrt}
_BINOPS: dict[str, Callable] = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "^": np.power,
}

# ─── Tokenizer ────────────────────────────────────────────────────────────────

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)
_PARAM_RE = re.compile(r"p(\d+)$")


@dataclass(frozen=True)
class _Token:
    kind: str    # num | x | param | func | op | end
    text: str
    offset: int


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    n = len(source)
    while pos < n:
        if source[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            start = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise ParseError(
                f"unexpected character {source[start]!r}",
                offset=start,
                expected=frozenset({"number", "x", "p<k>", "function", "operator", "("}),
            )
        start = m.start(m.lastgroup)
        text = m.group(m.lastgroup)
        if m.lastgroup == "num":
            tokens.append(_Token("num", text, start))
        elif m.lastgroup == "op":
            tokens.append(_Token("op", text, start))
        else:
            if text == "x":
                tokens.append(_Token("x", text, start))
            elif _PARAM_RE.match(text):
                tokens.append(_Token("param", text, start))
            elif text in FUNCTIONS:
                tokens.append(_Token("func", text, start))
            else:
                raise ParseError(
                    f"unknown identifier {text!r}",
                    offset=start,
                    expected=frozenset({"x", "p<k>", *FUNCTIONS}),
                )
        pos = m.end()
    tokens.append(_Token("end", "", n))
    return tokens


# ─── Recursive-Descent Parser ────────────────────────────────────────────────

_PRIMARY_START = frozenset({"number", "x", "p<k>", "exp", "log", "sqrt", "(", "-", "+"})


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def _is_op(self, *ops: str) -> bool:
        return self.tok.kind == "op" and self.tok.text in ops

    def _expect_op(self, op: str) -> None:
        if not self._is_op(op):
            raise ParseError(
                f"unexpected {self.tok.text or 'end of input'!r}",
                offset=self.tok.offset,
                expected=frozenset({op}),
            )
        self.i += 1

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            raise ParseError(
                f"unexpected {self.tok.text!r}",
                offset=self.tok.offset,
                expected=frozenset({"+", "-", "*", "/", "^", "end of input"}),
            )
        return node

    def expr(self) -> Node:
        node = self.term()
        while self._is_op("+", "-"):
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self._is_op("*", "/"):
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self._is_op("-"):
            self.i += 1
            return Neg(self.unary())
        if self._is_op("+"):
            self.i += 1
            return self.unary()
        return self.factor()

    def factor(self) -> Node:
        base = self.base()
        if self._is_op("^"):
            self.i += 1
            return BinOp("^", base, self.unary())
        return base

    def base(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text))
        if tok.kind == "x":
            self.i += 1
            return Var()
        if tok.kind == "param":
            self.i += 1
            return Param(int(tok.text[1:]))
        if tok.kind == "func":
            self.i += 1
            self._expect_op("(")
            arg = self.expr()
            self._expect_op(")")
            return Call(tok.text, arg)
        if self._is_op("("):
            self.i += 1
            node = self.expr()
            self._expect_op(")")
            return node
        raise ParseError(
            f"unexpected {tok.text or 'end of input'!r}",
            offset=tok.offset,
            expected=_PRIMARY_START,
        )


# ─── AST utilities ────────────────────────────────────────────────────────────


def to_source(node: Node) -> str:
    """Fully parenthesised source that re-parses to an equal AST."""
    if isinstance(node, Num):
        text = repr(float(node.value))
        return f"({text})" if node.value < 0 or text.startswith("-") else text
    if isinstance(node, Var):
        return "x"
    if isinstance(node, Param):
        return f"p{node.index}"
    if isinstance(node, Neg):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


def _param_indices(node: Node) -> set[int]:
    if isinstance(node, Param):
        return {node.index}
    if isinstance(node, Neg):
        return _param_indices(node.operand)
    if isinstance(node, BinOp):
        return _param_indices(node.left) | _param_indices(node.right)
    if isinstance(node, Call):
        return _param_indices(node.arg)
    return set()


def _compile(node: Node) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    if isinstance(node, Num):
        v = node.value
        return lambda x, th: v
    if isinstance(node, Var):
        return lambda x, th: x
    if isinstance(node, Param):
        i = node.index - 1
        return lambda x, th: th[i]
    if isinstance(node, Neg):
        g = _compile(node.operand)
        return lambda x, th: -g(x, th)
    if isinstance(node, BinOp):
        op = _BINOPS[node.op]
        left, right = _compile(node.left), _compile(node.right)
        return lambda x, th: op(left(x, th), right(x, th))
    if isinstance(node, Call):
        fn = FUNCTIONS[node.func]
        arg = _compile(node.arg)
        return lambda x, th: fn(arg(x, th))
    raise TypeError(f"not an expression node: {node!r}")


# ─── Data Models ──────────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class MeanExpr:
    """A parsed mean (or variance) function of x and parameters p1..pk."""

    source: str
    ast: Node = field(repr=False)
    arity: int = 0
    _fn: Callable = field(repr=False, default=None)

    def __call__(self, x, theta=()) -> np.ndarray | float:
        th = np.asarray(theta, dtype=float).ravel()
        if th.size < self.arity:
            raise ArityError(
                f"expression {self.source!r} needs {self.arity} parameter(s), got {th.size}"
            )
        scalar = np.ndim(x) == 0
        xv = float(x) if scalar else np.asarray(x, dtype=float)
        out = self._fn(xv, th)
        if scalar:
            return float(out)
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(xv)).copy()

    def to_source(self) -> str:
        return to_source(self.ast)


def parse_mean(source: str) -> MeanExpr:
    """
    Parse mean-function source into a MeanExpr.

    Raises:
        ParseError: malformed input (offset and expected-token set attached).
        ArityError: parameter indices skip (p1, p3 without p2) or start at p0.
    """
    if not source or not source.strip():
        raise ParseError("empty expression", offset=0, expected=_PRIMARY_START)
    ast = _Parser(source).parse()
    indices = _param_indices(ast)
    arity = max(indices, default=0)
    missing = sorted(set(range(1, arity + 1)) - indices)
    if 0 in indices:
        raise ArityError(f"parameters are numbered from p1; found p0 in {source!r}")
    if missing:
        names = ", ".join(f"p{i}" for i in missing)
        raise ArityError(f"parameter indices skip {names} in {source!r}")
    return MeanExpr(source=source, ast=ast, arity=arity, _fn=_compile(ast))


@dataclass(frozen=True)
class ModelSpec:
    """A rival mean function with its compact parameter box Θ."""

    mean: MeanExpr
    theta_dim: int
    theta_box: tuple[Interval, ...]

    def __post_init__(self):
        if self.theta_dim != self.mean.arity:
            raise ArityError(
                f"theta_dim={self.theta_dim} but {self.mean.source!r} uses {self.mean.arity} parameter(s)"
            )
        if len(self.theta_box) != self.theta_dim:
            raise ArityError(f"box has {len(self.theta_box)} coordinate(s), expected {self.theta_dim}")

    @property
    def lower(self) -> np.ndarray:
        return np.array([iv.lo for iv in self.theta_box])

    @property
    def upper(self) -> np.ndarray:
        return np.array([iv.hi for iv in self.theta_box])

    def contains(self, theta) -> bool:
        th = np.asarray(theta, dtype=float)
        return bool(np.all(th >= self.lower) and np.all(th <= self.upper))


@dataclass(frozen=True)
class DesignSpace:
    domain: Interval
    grid_n: int = DEFAULT_GRID_N

    def __post_init__(self):
        if self.grid_n < 2:
            raise ValueError(f"grid_n must be ≥ 2, got {self.grid_n}")

    def grid(self, n: int | None = None) -> np.ndarray:
        return np.linspace(self.domain.lo, self.domain.hi, n or self.grid_n)


class DensityKind(str, Enum):
    TRUNCATED_NORMAL = "truncated_normal"
    TRUNCATED_LOGNORMAL = "truncated_lognormal"
    NORMAL = "normal"
    LOGNORMAL = "lognormal"

    @property
    def bounded(self) -> bool:
        return self in (DensityKind.TRUNCATED_NORMAL, DensityKind.TRUNCATED_LOGNORMAL)


@dataclass(frozen=True)
class PointDensity:
    """A density family frozen at one design point: y ↦ f(y, x, θ)."""

    kind: DensityKind
    eta: float
    variance: float
    mu: float            # location on the (log-)normal scale
    sigma: float         # scale on the (log-)normal scale
    support: Interval | None
    mass: float = 1.0    # pre-truncation probability of the support

    def pdf(self, y) -> np.ndarray:
        yv = np.asarray(y, dtype=float)
        if self.kind in (DensityKind.NORMAL, DensityKind.TRUNCATED_NORMAL):
            z = (yv - self.mu) / self.sigma
            out = np.exp(-0.5 * z * z) / (self.sigma * SQRT_2PI * self.mass)
        else:
            pos = yv > 0
            safe = np.where(pos, yv, 1.0)
            z = (np.log(safe) - self.mu) / self.sigma
            out = np.where(pos, np.exp(-0.5 * z * z) / (safe * self.sigma * SQRT_2PI * self.mass), 0.0)
        if self.support is not None:
            out = np.where((yv >= self.support.lo) & (yv <= self.support.hi), out, 0.0)
        return out

    def __call__(self, y) -> np.ndarray:
        return self.pdf(y)


@dataclass(frozen=True)
class DensityFamily:
    """
    Conditional density family with a variance function v²(x, θ).

    TruncatedNormal: N(η, v²) restricted to [η − a, η + a].
    TruncatedLognormal: lognormal with mean η and variance v², restricted to
        its [Q(p_lo), Q(p_hi)] quantile range.
    Normal / Lognormal: untruncated.
    """

    kind: DensityKind
    variance: MeanExpr
    half_width: float | None = None
    quantiles: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind is DensityKind.TRUNCATED_NORMAL:
            if self.half_width is None or not self.half_width > 0:
                raise ValueError("truncated_normal needs a positive half_width")
        if self.kind is DensityKind.TRUNCATED_LOGNORMAL:
            if self.quantiles is None:
                raise ValueError("truncated_lognormal needs a (p_lo, p_hi) quantile pair")
            p_lo, p_hi = self.quantiles
            if not 0.0 < p_lo < p_hi < 1.0:
                raise ValueError(f"quantiles must satisfy 0 < p_lo < p_hi < 1, got {self.quantiles}")

    def variance_at(self, x: float, theta) -> float:
        v2 = float(self.variance(x, theta))
        if not (np.isfinite(v2) and v2 > 0):
            raise InvalidVariance(f"variance {v2} at x={x} is not positive", origin="models")
        return v2

    def at(self, x: float, theta, mean: MeanExpr) -> PointDensity:
        eta = float(mean(x, theta))
        v2 = self.variance_at(x, theta)
        return self.at_eta(eta, v2)

    def at_eta(self, eta: float, v2: float) -> PointDensity:
        kind = self.kind
        if kind in (DensityKind.NORMAL, DensityKind.TRUNCATED_NORMAL):
            sigma = math.sqrt(v2)
            if kind is DensityKind.NORMAL:
                return PointDensity(kind, eta, v2, eta, sigma, None)
            a = float(self.half_width)
            mass = float(erf(a / (sigma * math.sqrt(2.0))))
            return PointDensity(kind, eta, v2, eta, sigma, Interval(eta - a, eta + a), mass)

        if not eta > 0:
            raise DomainError(f"lognormal mean must be positive, got η={eta}", origin="models")
        s2 = math.log1p(v2 / (eta * eta))
        sigma = math.sqrt(s2)
        mu = math.log(eta) - 0.5 * s2
        if kind is DensityKind.LOGNORMAL:
            return PointDensity(kind, eta, v2, mu, sigma, None)
        z_lo = normal_quantile(self.quantiles[0])
        z_hi = normal_quantile(self.quantiles[1])
        mass = float(ndtr(z_hi) - ndtr(z_lo))
        iv = Interval(math.exp(mu + sigma * z_lo), math.exp(mu + sigma * z_hi))
        return PointDensity(kind, eta, v2, mu, sigma, iv, mass)


# ─── Density Operations ──────────────────────────────────────────────────────


def support(fam: DensityFamily, x: float, theta, mean: MeanExpr) -> Interval:
    """Support [y_min, y_max] at (x, θ); unbounded kinds raise UnboundedSupport."""
    if not fam.kind.bounded:
        raise UnboundedSupport(f"{fam.kind.value} density has unbounded support", origin="models")
    return fam.at(x, theta, mean).support


def density(fam: DensityFamily, y: float, x: float, theta, mean: MeanExpr) -> float:
    """f(y, x, θ); raises OutOfSupport for y outside a bounded support."""
    pd = fam.at(x, theta, mean)
    if pd.support is not None and not pd.support.contains(y):
        raise OutOfSupport(
            f"y={y} outside support [{pd.support.lo:.6g}, {pd.support.hi:.6g}]", origin="models"
        )
    return float(pd.pdf(y))


def normal_quantile(p: float) -> float:
    """
    Φ⁻¹(p): Acklam's rational approximation refined by one Newton step on Φ.
    Upper-half probabilities use the reflection Φ⁻¹(p) = −Φ⁻¹(1 − p).
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"normal_quantile needs 0 < p < 1, got {p}", origin="models")
    if p > 0.5:
        return -normal_quantile(1.0 - p)
    if p == 0.5:
        return 0.0

    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        z = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    else:
        q = p - 0.5
        r = q * q
        z = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)

    phi = math.exp(-0.5 * z * z) / SQRT_2PI
    z -= (float(ndtr(z)) - p) / phi
    return z


# ─── Self-Test ────────────────────────────────────────────────────────────────


def _self_test():
    log.info("Running models self-test …")

    m = parse_mean("p1*x + p2*x/(x + p3)")
    assert abs(m(1.0, (1, 1, 1)) - 1.5) < 1e-15
    m = parse_mean("p1 + p2*exp(x) + p3*exp(-x)")
    assert abs(m(0.0, (4.5, -1.5, -2)) - 1.0) < 1e-15
    assert parse_mean(m.to_source()).ast == m.ast
    log.info("  parse_mean … OK")

    assert normal_quantile(0.5) == 0.0
    assert abs(normal_quantile(0.9999) - 3.719016485455709) < 1e-9
    log.info("  normal_quantile … OK")

    fam = DensityFamily(DensityKind.TRUNCATED_NORMAL, parse_mean("1"), half_width=3.0)
    iv = support(fam, 0.0, (), parse_mean("0"))
    assert iv.as_tuple() == (-3.0, 3.0)
    log.info("  support … OK")

    log.info("Models self-test PASSED.")


# ─── Entry Point ──────────────────────────────────────────────────────────────

if __name__ == "__main__":
    if "--test" in sys.argv:
        _self_test()
        sys.exit(0)
    if len(sys.argv) > 1:
        expr = parse_mean(sys.argv[1])
        print(f"source: {expr.source}")
        print(f"parsed: {expr.to_source()}")
        print(f"arity:  {expr.arity}")
        sys.exit(0)
    print('Usage:  python models.py "p1*x/(x + p2)"   |   python models.py --test')
    sys.exit(1)

"""
Error hierarchy
=================
Every failure raised by the solver derives from DiscrimaxError. Two families
map onto the CLI exit-code contract:

    ConfigError     → exit 1  (bad config, bad expression, bad design literal)
    NumericalError  → exit 2  (quadrature, root finding, inner search failures)

Non-fatal conditions (non-unique inner minimiser, optimizer stall) are
UserWarning subclasses so callers can filter or escalate them.
"""

from __future__ import annotations


class DiscrimaxError(Exception):
    """Base class. *origin* names the module the failure came from."""

    exit_code = 2

    def __init__(self, message: str, *, origin: str = "discrimax"):
        super().__init__(message)
        self.origin = origin

    def __str__(self) -> str:
        return f"[{self.origin}] {super().__str__()}"


# ─── Configuration / input errors (exit 1) ────────────────────────────────────


class ConfigError(DiscrimaxError):
    exit_code = 1

    def __init__(self, message: str, *, origin: str = "config", line: int | None = None,
                 field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message, origin=origin)


class ParseError(ConfigError):
    """Malformed mean-function source."""

    def __init__(self, message: str, *, offset: int, expected: frozenset[str] = frozenset()):
        self.offset = offset
        self.expected = frozenset(expected)
        exp = ", ".join(sorted(self.expected)) if self.expected else "?"
        super().__init__(f"{message} at offset {offset}; expected one of: {exp}", origin="models")


class ArityError(ConfigError):
    def __init__(self, message: str):
        super().__init__(message, origin="models")


# ─── Numerical errors (exit 2) ────────────────────────────────────────────────


class NumericalError(DiscrimaxError):
    exit_code = 2


class NonConvergent(NumericalError):
    pass


class NoBracket(NumericalError):
    pass


class OutOfSupport(NumericalError):
    pass


class InvalidVariance(NumericalError):
    pass


class UnboundedSupport(NumericalError):
    pass


class DomainError(NumericalError):
    pass


class SupportMismatch(NumericalError):
    pass


class InnerNonConvergent(NumericalError):
    pass


class ZeroReference(NumericalError):
    pass


# ─── Warnings ─────────────────────────────────────────────────────────────────


class NonUniqueMinimum(UserWarning):
    """Two inner starts tie in value but disagree on θ₂."""


class StallWarning(UserWarning):
    """The exchange algorithm stopped improving before certifying optimality."""

"""Typed errors shared across modules.

Every error renders as a single machine-parsable line of the form
``error: <Name>: key=value ...`` which the CLI writes to stderr.
"""

from __future__ import annotations


class RFError(Exception):
    """Base class for domain errors; ``fields`` carries structured detail."""

    def __init__(self, message: str = "", **fields):
        self.fields = fields
        self.message = message
        super().__init__(self.line())

    @property
    def name(self) -> str:
        return type(self).__name__

    def line(self) -> str:
        parts = [f"error: {self.name}:"]
        if self.message:
            parts.append(self.message.replace("\n", " "))
        parts.extend(f"{k}={v}" for k, v in self.fields.items())
        return " ".join(parts)


class EmptyDims(RFError):
    pass


class ZeroDim(RFError):
    pass


class DimMismatch(RFError):
    pass


class ShapeMismatch(RFError):
    pass


class SingularGram(RFError):
    pass


class NoConvergence(RFError):
    pass


class DomainViolation(RFError):
    pass


class Divergence(RFError):
    pass


class NonpositiveVariance(RFError):
    pass


class NonOddActivation(RFError):
    pass


class LayerOutOfRange(RFError):
    pass


class DegenerateRatio(RFError):
    pass


class BadMagic(RFError):
    pass


class Truncated(RFError):
    def __init__(self, expected: int, got: int, message: str = ""):
        self.expected = expected
        self.got = got
        super().__init__(message, expected=expected, got=got)


class InsufficientClass(RFError):
    def __init__(self, c: int, have: int, need: int):
        self.c, self.have, self.need = c, have, need
        super().__init__("", c=c, have=have, need=need)


class InsufficientData(RFError):
    pass


class OutOfRange(RFError):
    pass


class IoError(RFError):
    pass


class ParseError(RFError):
    def __init__(self, line: int, message: str = ""):
        self.lineno = line
        super().__init__(message, line=line)


class ConfigError(RFError):
    pass

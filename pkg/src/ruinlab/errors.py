"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RuinLabError(Exception):
    """Base class for all package errors."""


class ModelError(RuinLabError, ValueError):
    """Invalid model parameters (non-positive rates, nonnegative drift, ...)."""


class NoPositiveRoot(RuinLabError):
    """The Laplace exponent has no positive root on its finite domain."""


class InfiniteTilt(RuinLabError):
    """The moment generating function is infinite at the requested tilt."""


class HorizonAmbiguous(RuinLabError):
    """A simulated path is still close to the barrier when the horizon is hit."""


class DivergentIntegral(RuinLabError):
    """A defining integral does not converge at the requested arguments."""

    def __init__(self, message: str, *args: float) -> None:
        super().__init__(message)
        self.arguments = args


class RootBracketFailure(RuinLabError):
    """A bracketed root search could not find a sign change."""


class RegimeMismatch(RuinLabError):
    """A formula was requested for a regime the system does not belong to."""


class InsufficientSamples(RuinLabError):
    """Too few Monte Carlo samples to form the requested estimate."""


class NoRuinEvents(RuinLabError):
    """A plain conditional estimate saw no ruined paths."""


class EmptyWindow(RuinLabError):
    """No sample or law mass falls inside the comparison window."""


class ConfigError(RuinLabError):
    """A configuration file could not be parsed or validated."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None) -> None:
        where = ""
        if key is not None:
            where = f" [{key}"
            if line is not None:
                where += f", line {line}"
            where += "]"
        super().__init__(message + where)
        self.key = key
        self.line = line

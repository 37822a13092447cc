"""Exception types shared across the simulator."""

from __future__ import annotations


class RoTipError(Exception):
    """Base class for every error raised by this package."""


class AntiparallelInput(RoTipError, ValueError):
    pass


class OutOfBounds(RoTipError, ValueError):
    pass


class NoIntersection(RoTipError, ValueError):
    pass


class BehindCamera(RoTipError, ValueError):
    pass


class EmptyResult(RoTipError, ValueError):
    pass


class EmptyMask(RoTipError, ValueError):
    pass


class DegenerateCloud(RoTipError, ValueError):
    pass


class InfeasibleStack(RoTipError, ValueError):
    pass


class InvalidScenario(RoTipError, ValueError):
    pass


class SingularSlope(RoTipError, ArithmeticError):
    pass


class Infeasible(RoTipError, ValueError):
    """No squeeze force satisfies the friction constraints."""


class NoConvergence(RoTipError, RuntimeError):
    pass


class AmbiguousMinimum(RoTipError, RuntimeError):
    pass


class StallDetected(RoTipError, RuntimeError):
    pass


class ConfigError(RoTipError, ValueError):
    """Bad scenario configuration; carries the offending file/section/key."""

    def __init__(self, message: str, *, path: str | None = None, section: str | None = None,
                 key: str | None = None, line: int | None = None) -> None:
        self.path = path
        self.section = section
        self.key = key
        self.line = line
        where = []
        if path:
            where.append(path if line is None else f"{path}:{line}")
        if section:
            where.append(f"[{section}]" + (f".{key}" if key else ""))
        prefix = " ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)

"""Exception types shared across the package."""

from __future__ import annotations

from typing import Any


class DomainError(ValueError):
    """A parameter lies outside the domain of a formula or estimator."""

    def __init__(self, name: str, message: str):
        self.name = name
        super().__init__(f"{name}: {message}")


class ConfigError(ValueError):
    """Invalid experiment or pipeline configuration; ``key`` names the offender."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class NumericError(ArithmeticError):
    """A probability table does not sum to one."""


class BackendError(RuntimeError):
    """A model backend failed to produce a step."""

    def __init__(self, message: str, context: dict[str, Any] | None = None):
        self.context = dict(context or {})
        super().__init__(message)


class CycleError(RuntimeError):
    """A speculation cycle aborted; ``partial`` holds whatever was produced so far."""

    def __init__(self, message: str, partial: dict[str, Any]):
        self.partial = partial
        super().__init__(message)


def check_probability(name: str, value: float, *, closed_low: bool = False) -> float:
    value = float(value)
    low_ok = value >= 0.0 if closed_low else value > 0.0
    if not (low_ok and value < 1.0):
        interval = "[0, 1)" if closed_low else "(0, 1)"
        raise DomainError(name, f"must lie in {interval}, got {value!r}")
    return value


def check_positive_int(name: str, value: int, minimum: int = 1) -> int:
    if isinstance(value, bool) or int(value) != value:
        raise DomainError(name, f"must be an integer, got {value!r}")
    value = int(value)
    if value < minimum:
        raise DomainError(name, f"must be >= {minimum}, got {value}")
    return value

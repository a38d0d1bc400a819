"""Exception types shared across the samplers."""

from __future__ import annotations


class ParameterError(ValueError):
    """An argument is outside the domain a sampler or formula accepts."""


class NumericalError(ArithmeticError):
    """A factorization or structured solve failed.

    ``where`` names the failing block or dimension so callers can report it.
    """

    def __init__(self, message: str, where: object = None):
        super().__init__(message if where is None else f"{message} ({where})")
        self.where = where


class InvariantViolation(RuntimeError):
    """A chain reached a state that should be impossible, e.g. a non-finite
    log-likelihood at the current position."""


class ChainError(RuntimeError):
    """Wraps an error raised inside a chain with the iteration it occurred at."""

    def __init__(self, iteration: int, cause: BaseException):
        super().__init__(f"iteration {iteration}: {type(cause).__name__}: {cause}")
        self.iteration = iteration
        self.cause = cause

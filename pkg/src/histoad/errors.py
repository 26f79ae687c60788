"""Exception hierarchy for histoad.

Bad input is reported with exceptions that also derive from ``ValueError`` so
callers that catch ``ValueError`` keep working. The CLI maps these classes to
exit codes (see ``histoad.cli``).
"""

from __future__ import annotations

from typing import List, Optional, Sequence


class HistoadError(Exception):
    """Base class for every error raised by histoad."""


class InvalidInputError(HistoadError, ValueError):
    """Input data violates an operation's precondition."""


class ConfigurationError(HistoadError, ValueError):
    """A configuration value or combination of values is unusable."""


class UndefinedSimilarityError(InvalidInputError):
    """Cosine similarity requested for a zero vector."""


class FeatureFileError(InvalidInputError):
    """A feature or checkpoint file could not be decoded.

    Attributes:
        code: One of ``magic``, ``version``, ``dim``, ``truncated``,
            ``metadata``.
        path: File that failed to decode, when known.
    """

    CODES = ("magic", "version", "dim", "truncated", "metadata")

    def __init__(self, code: str, message: str, path: Optional[str] = None):
        if code not in self.CODES:
            raise ValueError(f"Unknown feature file error code '{code}'")
        self.code = code
        self.path = path
        where = f" ({path})" if path else ""
        super().__init__(f"[{code}] {message}{where}")


class NumericalError(HistoadError, ArithmeticError):
    """Training produced a non-finite loss or gradient.

    Attributes:
        step: Optimizer step at which the failure was detected.
        loss_trace: Losses recorded up to and including the failing step.
    """

    def __init__(self, message: str, step: int = -1, loss_trace: Optional[Sequence[float]] = None):
        self.step = step
        self.loss_trace: List[float] = list(loss_trace or [])
        super().__init__(message)


__all__ = [
    "HistoadError",
    "InvalidInputError",
    "ConfigurationError",
    "UndefinedSimilarityError",
    "FeatureFileError",
    "NumericalError",
]

"""Exception types raised across the package.

Everything inherits from :class:`FPDeltaError` so callers (and the CLI)
can distinguish computation errors from genuine bugs.
"""

from __future__ import annotations


class FPDeltaError(Exception):
    """Base class for all errors raised by fpdelta."""


class PopulationFormatError(FPDeltaError, ValueError):
    """Malformed population input (bad CSV row, column/kind mismatch, N < 2)."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class DesignError(FPDeltaError, ValueError):
    """Invalid sampling/assignment design (margin out of range, arm too small)."""


class EnumerationCapError(FPDeltaError):
    """Exhaustive enumeration would exceed the configured cap."""

    def __init__(self, count: int, cap: int):
        super().__init__(
            f"enumeration of {count} assignments exceeds cap {cap}; "
            f"raise the cap to at least {count} to proceed"
        )
        self.count = count
        self.cap = cap


class DomainError(FPDeltaError, ValueError):
    """Point lies outside a functional's domain.

    ``coordinate`` identifies the offending coordinate when it can be
    determined; ``index`` identifies an offending population unit where
    that is the natural reference (e.g. a nonpositive outcome).
    """

    def __init__(self, message: str, coordinate: int | None = None, index: int | None = None):
        super().__init__(message)
        self.coordinate = coordinate
        self.index = index


class DegenerateVarianceError(FPDeltaError, ValueError):
    """A variance required to be positive is zero (constant population, etc.)."""


class ReplicationFailureError(FPDeltaError, RuntimeError):
    """Too many replicates hit domain violations for the run to be trusted."""

    def __init__(self, failures: int, replications: int, max_rate: float):
        super().__init__(
            f"{failures}/{replications} replicates failed "
            f"(allowed rate {max_rate:g}); results would not be trustworthy"
        )
        self.failures = failures
        self.replications = replications

"""Exception hierarchy. Each class carries the CLI exit code for its family."""

from __future__ import annotations


class DisplaceKitError(Exception):
    """Base class; unclassified failures map to exit code 5 (invariant violation)."""

    exit_code = 5


class ConfigError(DisplaceKitError):
    """Bad run configuration (missing file, unresolvable city, invalid parameter)."""

    exit_code = 2


class ParseError(DisplaceKitError):
    """Input file cannot be parsed (bad header, malformed structure)."""

    exit_code = 3


class AbortThresholdExceeded(DisplaceKitError):
    """More than half of the ingested rows were malformed; feed looks like the wrong file."""

    exit_code = 4


class UnknownCode(DisplaceKitError):
    """Admin-unit code not present in the loaded hierarchy."""


class HierarchyGap(DisplaceKitError):
    """No city-level (ADM3) ancestor exists for the given code."""


class EmptyInput(DisplaceKitError):
    """Operation requires a non-empty collection."""


class MissingBaseline(DisplaceKitError):
    """Profile classification requested for a user without a valid residential baseline."""


class ZeroBaseline(DisplaceKitError):
    """No baseline users for the requested city."""


class InsufficientBaseline(DisplaceKitError):
    """Too few baseline days to estimate the dispersion factor."""


class EmptyWindow(DisplaceKitError):
    """Return dynamics requested over an empty observation window."""


class GridMismatch(DisplaceKitError):
    """Detector statuses and ground truth do not cover the same (user, day) grid."""


class InvalidScenario(DisplaceKitError):
    """Synthetic scenario specification violates its invariants."""


class ZeroDenominator(DisplaceKitError):
    """Population scaling requested with a zero average daily baseline."""

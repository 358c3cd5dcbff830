"""Exception types shared across the toolkit."""

from __future__ import annotations


class ToolkitError(Exception):
    """Base class for all geodrift errors."""


class DomainError(ToolkitError):
    """A state lies outside the chart domain or an argument is out of range."""


class UnsupportedOperationError(ToolkitError):
    """Operation requires structure the model does not have (e.g. homogeneity)."""


class NotConvergedError(ToolkitError):
    """An iterative computation failed to reach its tolerance."""


class NotHyperbolicError(ToolkitError):
    """A periodic orbit's multipliers are too close to the unit circle."""


class NoOrbitFoundError(ToolkitError):
    """Newton refinement of a periodic orbit diverged."""


class InsufficientDataError(ToolkitError):
    """A statistic was requested from too few observed events."""


class ShrinkRequiredError(ToolkitError):
    """A flow box of the requested size fails transversality.

    Carries the largest half-thickness that did pass the check.
    """

    def __init__(self, message: str, max_rho: float):
        super().__init__(message)
        self.max_rho = max_rho


class InvalidBlockError(ToolkitError):
    """Building-block angle budget does not exceed the phase shift."""


class InvalidSupportError(ToolkitError):
    """A bump support overlaps orbits it must avoid."""


class PrematureReinitError(ToolkitError):
    """Re-initialization requested before the scaled energy reached the top."""


class PathInfeasibleError(ToolkitError):
    """No block on the current grid moves the ledger toward the target."""


class EpochOverflowError(ToolkitError):
    """Scaled energy left [1, 2] before the schedule finished.

    Carries the ledger index at which the band was left.
    """

    def __init__(self, message: str, block_index: int):
        super().__init__(message)
        self.block_index = block_index


class ChainBuildError(ToolkitError):
    """A window chain link failed certification.

    Carries the link index and the violated margin.
    """

    def __init__(self, message: str, link: int, margin: float):
        super().__init__(message)
        self.link = link
        self.margin = margin


class ConfigError(ToolkitError):
    """Malformed or inconsistent run configuration."""

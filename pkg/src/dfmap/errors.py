"""Exception types shared across the package."""


class DfmapError(Exception):
    """Base class for all estimation-related failures."""


class NumericError(DfmapError, RuntimeError):
    """A linear-algebra or floating-point failure inside a numeric kernel."""

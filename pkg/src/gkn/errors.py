"""Exception types shared across the package."""


class GknError(Exception):
    """Base class for all package errors."""


class DataError(GknError):
    """Malformed, inconsistent, or missing input data."""


class NumericError(GknError):
    """Numerical failure: non-finite values, shape mismatches, divergence."""


class CheckpointError(DataError):
    """Corrupt, truncated, or incompatible checkpoint file."""

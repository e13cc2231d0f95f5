"""Exception types shared across the package."""


class DataError(Exception):
    """Malformed datasets, files, or mismatched shapes at the data level."""


class NumericalError(Exception):
    """Non-finite values detected during computation."""

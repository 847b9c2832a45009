"""Exception types shared across the package."""


class CxdoseError(Exception):
    """Base class for all package errors."""


class DimensionError(CxdoseError):
    """Array shapes or sizes are inconsistent with the requested operation."""


class DataError(CxdoseError):
    """Invalid file contents or violated data invariants (CLI exit code 3)."""


class NumericalError(CxdoseError):
    """Divergence or failed numerical procedure (CLI exit code 4)."""

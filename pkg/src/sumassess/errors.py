"""Shared exception types."""


class SumassessError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(SumassessError):
    """A data file does not match its documented schema.

    The message names the offending entry and field.
    """

"""Shared exception types."""


class ValidationError(ValueError):
    """Input data or configuration violates a documented contract."""


class SchemaError(ValidationError):
    """A schema spec file is malformed or references a missing column."""


class ReferentialError(ValidationError):
    """A child row references a crash or unit that does not exist."""


class UndefinedStatistic(ValueError):
    """A ratio, share, or weight is undefined for the given inputs."""

"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class DegenerateSampleError(DomainError):
    """A sample has zero variance, so a t statistic is undefined."""


class ParseError(ValueError):
    """A study table could not be read; the message names row and column."""

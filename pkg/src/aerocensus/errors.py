"""Exception hierarchy shared by all pipeline stages."""

from __future__ import annotations


class AerocensusError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AerocensusError):
    """Invalid or inconsistent configuration."""


class SchemaError(AerocensusError):
    """An input file does not carry the attributes a stage requires."""


class ParseError(AerocensusError):
    """A response or file could not be parsed; names the offending field."""


class RetryableError(AerocensusError):
    """A transient failure (network) that exhausted its retry budget."""


class EmptyResultError(AerocensusError):
    """A query or file yielded no records where at least one was required."""


class EmptyInputError(AerocensusError):
    """An input container (file, list) was empty."""


class InputError(AerocensusError):
    """A value passed to an operation violates its preconditions."""


class DegenerateGeometryError(AerocensusError):
    """A geometry or mask has zero extent where positive extent is required."""


class UndefinedMetricError(AerocensusError):
    """A derived metric is undefined for the given survey counts."""


class MissingUpstreamError(AerocensusError):
    """A pipeline stage was invoked before the stage that produces its input."""

    def __init__(self, missing: str, producing_stage: str):
        super().__init__(
            f"missing upstream artifact {missing!r}; run the {producing_stage!r} stage first"
        )
        self.missing = missing
        self.producing_stage = producing_stage

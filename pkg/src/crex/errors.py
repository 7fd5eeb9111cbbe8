"""Exception hierarchy shared across the package."""


class CrexError(Exception):
    """Base class for all errors raised by crex."""


class ParseError(CrexError):
    """Raw input could not be parsed (malformed JSON, wrong container type)."""


class ValidationError(CrexError):
    """A value violated a documented invariant."""


class ConfigError(CrexError):
    """A configuration value is missing, unknown, or out of range."""


class GradientError(CrexError):
    """A gradient entry was non-finite; the optimizer step was aborted."""

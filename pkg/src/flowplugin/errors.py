"""Exception types shared across the package."""


class FlowPluginError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(FlowPluginError, ValueError):
    """Operand shapes do not conform."""


class NumericError(FlowPluginError, ArithmeticError):
    """A computation produced or received non-finite values."""


class ParseError(FlowPluginError, ValueError):
    """A serialized artifact is malformed."""


class ConfigError(FlowPluginError, ValueError):
    """An experiment configuration is invalid."""


class PreconditionError(FlowPluginError, ValueError):
    """A documented operation precondition was violated."""

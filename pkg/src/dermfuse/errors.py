"""Exception hierarchy shared across the package."""


class DermfuseError(Exception):
    """Base class for all errors raised by dermfuse."""


class ShapeError(DermfuseError, ValueError):
    pass


class BroadcastError(ShapeError):
    pass


class AxisError(DermfuseError, ValueError):
    pass


class RankError(DermfuseError, ValueError):
    pass


class NoGraphError(DermfuseError, RuntimeError):
    pass


class InvalidProbabilityError(DermfuseError, ValueError):
    pass


class ConfigError(DermfuseError, ValueError):
    pass


class SelectorError(DermfuseError, LookupError):
    pass


class SchemaError(DermfuseError, ValueError):
    pass


class IntegrityError(DermfuseError, ValueError):
    pass


class ClassMissingError(DermfuseError, ValueError):
    pass


class InsufficientGroupsError(DermfuseError, ValueError):
    pass


class ConsistencyError(DermfuseError, RuntimeError):
    pass


class FormatError(DermfuseError, ValueError):
    pass


class CompatibilityError(DermfuseError, ValueError):
    pass


class DivergenceError(DermfuseError, ArithmeticError):
    """Training produced a non-finite loss."""

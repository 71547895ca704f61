"""Exception types shared across the package."""


class EviSteerError(Exception):
    pass


class DimensionError(EviSteerError, ValueError):
    """Shapes or axes that do not conform."""


class DomainError(EviSteerError, ValueError):
    """Input outside the mathematical domain of an operation."""


class ContractError(EviSteerError, ValueError):
    """A documented precondition was violated by the caller."""


class NumericalError(EviSteerError, ArithmeticError):
    """A computation produced a non-finite or degenerate value."""


class EvaluationError(EviSteerError, RuntimeError):
    """A user-supplied function misbehaved during a probe."""


class DataError(EviSteerError, ValueError):
    pass


class ConfigError(EviSteerError, ValueError):
    pass

"""Exception types raised across the package."""


class MdstError(Exception):
    """Base class for all package errors."""


class DimensionError(MdstError, ValueError):
    pass


class NumericDomainError(MdstError, ArithmeticError):
    pass


class ContractError(MdstError, ValueError):
    """A precondition or structural invariant was violated."""


class InsufficientFramesError(ContractError):
    pass


class ConfigError(MdstError, ValueError):
    pass


class DataError(MdstError, ValueError):
    pass

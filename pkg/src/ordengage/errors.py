"""Exception hierarchy shared by every module in the package."""


class OrdengageError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(OrdengageError):
    """Tensor or layer dimension mismatch."""


class ParameterError(OrdengageError):
    """An argument is outside its documented domain."""


class ContractError(OrdengageError):
    """A documented precondition or invariant was violated."""


class NumericError(OrdengageError):
    """A computation produced non-finite values."""


class IngestionError(OrdengageError):
    """Malformed input data file."""


class LeakageError(ContractError):
    """An operation would contaminate the test split."""


class CheckpointError(OrdengageError):
    """Unreadable, corrupt, or incompatible checkpoint."""


class ConfigError(OrdengageError):
    """Invalid run configuration."""

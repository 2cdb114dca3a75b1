"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes and machine-parsable categories, so new
error types should subclass one of the four roots below.
"""


class ShapeError(ValueError):
    """Tensor extents do not line up for the requested operation."""


class ConfigError(ValueError):
    """Invalid architecture or run configuration."""


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


class ContractError(RuntimeError):
    """An operation was called outside its documented preconditions."""

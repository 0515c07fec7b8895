"""Exception taxonomy shared across the package.

The CLI maps these onto its exit-code contract: usage/format problems
exit 2, verification failures exit 1, resource limits exit 3.
"""


class PoolAttnError(Exception):
    """Base class for all library errors."""


class DimensionError(PoolAttnError, ValueError):
    """Operand shapes are incompatible; the message names both shapes."""


class PoolSizeError(PoolAttnError, ValueError):
    """A pool output size does not fit the spatial extent."""


class ConfigurationError(PoolAttnError, ValueError):
    """A module or run configuration is internally inconsistent."""


class LabelError(PoolAttnError, ValueError):
    """A class label is out of range; the message names the pixel."""


class NonFiniteError(PoolAttnError, ArithmeticError):
    """An operation produced NaN/Inf, which the library treats as an internal error."""


class TrainingDivergenceError(PoolAttnError, RuntimeError):
    """Training loss became non-finite; the message reports the step."""


class OracleError(PoolAttnError, RuntimeError):
    """A finite-difference probe evaluated the target to a non-finite value."""


class ComparisonError(PoolAttnError, ValueError):
    """Two cost reports were compared at different shapes."""


class DptFormatError(PoolAttnError, ValueError):
    """A tensor file violates the DPT binary layout or the JSON tensor form."""


class ResourceLimitError(PoolAttnError, RuntimeError):
    """A run would exceed a user-supplied resource cap (CLI exit code 3)."""

"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
DivergenceError -> 3.
"""


class EclabError(Exception):
    pass


class UsageError(EclabError):
    """Bad CLI arguments or malformed configuration."""


class DataError(EclabError):
    """Malformed or inconsistent input data (files, corpora, shapes of records)."""


class DivergenceError(EclabError):
    """Training produced non-finite values."""


class ShapeError(EclabError, ValueError):
    """Tensor operands with incompatible shapes or dtypes."""


class GradientError(EclabError, RuntimeError):
    """Backward-pass contract violations (missing grads, non-finite gradients)."""

"""Exception types shared across the package.

The CLI maps these onto exit codes: ValidationError -> 2, NumericalError -> 3.
"""


class PulseWssError(Exception):
    """Base class for package errors."""


class ValidationError(PulseWssError, ValueError):
    """Bad input: malformed file, violated precondition, shape mismatch."""


class NumericalError(PulseWssError, RuntimeError):
    """Numerical failure: solver non-convergence, divergence, NaN loss."""

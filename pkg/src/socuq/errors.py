"""Exception types shared across the package.

The CLI maps ValidationError to exit code 1 and NumericalError to exit
code 2; everything else is a bug.
"""


class ValidationError(ValueError):
    """Bad input: malformed file, out-of-range argument, broken invariant."""


class RangeError(ValidationError):
    """A value fell outside the domain of a table or curve."""


class NumericalError(RuntimeError):
    """Simulation produced a non-finite or physically invalid state."""

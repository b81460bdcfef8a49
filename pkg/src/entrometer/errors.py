"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data problems
exit 2, numerical failures exit 3.
"""


class EntrometerError(Exception):
    """Base class for all package-specific errors."""


class CapacityError(EntrometerError):
    """System size exceeds what dense simulation supports."""


class InvalidStateError(EntrometerError):
    """A state violates its physicality invariants (norm, trace, positivity)."""


class NumericalError(EntrometerError):
    """A numerical routine left its validity envelope (divergence, NaN, drift)."""


class SamplingError(EntrometerError):
    """A sampler could not produce valid output (e.g. no positive-probability start)."""


class DataFormatError(EntrometerError):
    """On-disk dataset or checkpoint is malformed, truncated or of unknown version."""

"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ValidationError -> 2,
DivergenceError -> 3, everything else is a genuine crash.
"""


class ValidationError(ValueError):
    """Bad input: malformed files, violated invariants, out-of-range config."""


class DivergenceError(RuntimeError):
    """Numeric failure: non-finite loss or gradients, singular innovation."""


class CheckpointError(ValidationError):
    """Corrupt, truncated, or version-incompatible checkpoint."""

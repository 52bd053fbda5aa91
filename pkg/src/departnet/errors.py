"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: DataError -> 2, ModelError -> 3.
"""


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


class ModelError(RuntimeError):
    """Raised when a model fit cannot be completed (rank deficiency,
    non-convergence, empty fitting table)."""

"""Exception and warning types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, numerical failures with 3, insufficient data with 4.
"""


class ConfigurationError(ValueError):
    """Invalid or inconsistent configuration (bad parameter, unknown key)."""


class DomainError(ValueError):
    """Arguments outside an operation's domain (bad node pair, wrong shape)."""


class IndexSetError(KeyError):
    """A multi-index (or pair) outside the active index set was requested."""


class NumericalError(RuntimeError):
    """A computation produced non-finite values or failed to converge."""


class SolverError(NumericalError):
    """Time-stepping failure; carries the last node index that was still good."""

    def __init__(self, message, last_good_index=None):
        super().__init__(message)
        self.last_good_index = last_good_index


class InsufficientDataError(RuntimeError):
    """Too little data to estimate the requested statistic."""


class ConvergenceWarning(UserWarning):
    """Refinement sequence is not settling; result returned anyway."""

"""Exception hierarchy shared by all modules.

The CLI maps these onto process exit codes: ConfigurationError -> 1,
ResourceBudgetError -> 2, everything else derived from LabError -> 4
(acceptance failures use exit code 3 and are not exceptions).
"""


class LabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(LabError):
    """Invalid specification, config file, or argument combination."""


class ResourceBudgetError(LabError):
    """A requested computation exceeds its declared memory/state budget."""


class NumericalError(LabError):
    """A solve or check failed to reach its required tolerance."""


class DomainError(LabError):
    """A lattice point lies outside an environment's or function's domain."""


class DomainExitError(DomainError):
    """A walk left a boxed environment; carries the offending step index."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class HorizonError(LabError):
    """A refresh-time sample exceeded the hard horizon.

    Usually means the environment is not genuinely d-dimensional along the
    sampled trajectory, so the refresh time may be infinite.
    """


class ClosureError(LabError):
    """A state class handed to a stationary solve is not closed."""


class PreconditionError(LabError):
    """An operation's mathematical precondition failed a runtime check."""

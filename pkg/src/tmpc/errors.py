"""Exception types raised across the package."""


class TmpcError(Exception):
    """Base class for all package errors."""


class ConfigError(TmpcError, ValueError):
    """Invalid parameters, scenario fields or command flags.

    ``problems`` lists every field-level message found, so callers can report
    them all at once instead of one per run.
    """

    def __init__(self, message, problems=None):
        self.problems = list(problems or [])
        if self.problems:
            message = message + ":\n  " + "\n  ".join(self.problems)
        super().__init__(message)


class DomainError(TmpcError, ValueError):
    """A state outside the domain of a kinematic map (e.g. gimbal lock)."""


class IntegrationDiverged(TmpcError, ArithmeticError):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"integration produced a non-finite state at step {step}")


class SolverError(TmpcError, RuntimeError):
    """Every sampled rollout diverged."""

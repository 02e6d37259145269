"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """Raised when an argument breaks a documented precondition (shapes, ranges)."""


class SingularityError(ArithmeticError):
    """Raised when a factorization meets a zero or negative pivot."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative routine exhausts its iteration cap.

    The best available estimate is kept on ``best_estimate``.
    """

    def __init__(self, message, best_estimate=None):
        super().__init__(message)
        self.best_estimate = best_estimate


class DegenerateConditionError(ValueError):
    """Raised for kappa == 1 instances where the hard construction collapses."""


class CapacityError(RuntimeError):
    """Raised when a resisting oracle runs out of room in its truncated space."""


class UnsupportedObjectiveError(RuntimeError):
    """Raised when a solver detects that the objective breaks its assumptions."""


class ConfigError(ContractViolation):
    """Raised by config parsing; ``errors`` lists every problem as ``"path: message"``."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))

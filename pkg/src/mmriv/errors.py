"""Exception types shared across the package."""


class InputError(ValueError):
    """Raised when arguments violate a precondition (shape, sign, size)."""


class NumericalError(ArithmeticError):
    """Raised when a factorization or solve fails beyond recovery."""


class DivergenceError(NumericalError):
    """Raised when gradient training produces a non-finite or exploding objective.

    ``last_state`` holds the most recent parameters with a finite objective.
    """

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class ConfigError(InputError):
    """Raised when an experiment configuration is malformed."""

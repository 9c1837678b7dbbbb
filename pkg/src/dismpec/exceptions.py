"""Exception types raised across the package."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class GraphConstructionError(ValueError):
    """A graph family could not be built with the requested parameters."""

    def __init__(self, message, parameter=None):
        super().__init__(message)
        self.parameter = parameter


class InfeasibleError(ValueError):
    """A feasible set handed to a projector is empty."""


class NumericalError(ArithmeticError):
    """An iterative numerical routine failed to converge."""


class DivergenceError(ArithmeticError):
    """Non-finite values appeared in the agents' iterates.

    ``iteration`` is the upper-level index at which the check failed and
    ``trajectory`` holds whatever was recorded before that point.
    """

    def __init__(self, message, iteration, trajectory=None):
        super().__init__(message)
        self.iteration = iteration
        self.trajectory = trajectory


class ConfigError(ValueError):
    """An experiment plan is malformed."""

"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid inputs: bad shapes, invalid probabilities, unknown options."""


class RankError(ConfigurationError):
    """Feature matrix or Gram matrix is rank deficient beyond the guard."""


class SingularSystemError(ArithmeticError):
    """The n-step system matrix A_n is numerically singular: no unique fixed
    point exists at this n."""


class StationaryDistributionError(RuntimeError):
    """Power iteration for the behavior stationary distribution failed; the
    caller should supply d_beta explicitly."""


class EnumerationLimitError(RuntimeError):
    """Exhaustive path enumeration would exceed the path budget."""


class NumericalError(ArithmeticError):
    """An internal numerical guard tripped (rate-bound violation, row-sum
    drift, unreliable solve). Indicates an implementation or conditioning
    problem, not a property of the model."""

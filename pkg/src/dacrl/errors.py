"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates a documented shape or range precondition."""


class ConfigError(ValueError):
    """A configuration was rejected before any training step ran."""


class AssumptionViolation(ConfigError, ContractError):
    """A convergence precondition (step sizes, mixing, rewards) does not hold."""

    def __init__(self, message, *, assumption=None, value=None):
        super().__init__(message)
        self.assumption = assumption
        self.value = value


class DivergenceError(ArithmeticError):
    """Base class for non-finite parameters appearing during learning."""

    def __init__(self, message, *, step=None, agent=None, detail=None):
        super().__init__(message)
        self.step = step
        self.agent = agent
        self.detail = detail or {}


class PoisonedCriticError(DivergenceError):
    pass


class PoisonedActorError(DivergenceError):
    pass


class SingularSystemError(ArithmeticError):
    pass


class LocalityError(RuntimeError):
    """A message crossed a link that is not in the communication graph."""

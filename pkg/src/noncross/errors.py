"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes do not agree."""


class ContractError(ValueError):
    """A caller broke an operation's precondition."""


class ConfigError(ValueError):
    """Invalid or out-of-range configuration."""


class NumericGuardError(ArithmeticError):
    """A computation would divide by a vanishing quantity."""


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at step {step}")
        self.step = step
        self.loss = loss

"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, numeric failures (TrainingDivergedError,
DegenerateReferenceError) -> 4.
"""


class ShapeError(ValueError):
    """Matrix dimensions do not match what an operation requires."""


class DomainError(ValueError):
    """A fixed value is not in the feature's declared value domain."""


class ConfigError(ValueError):
    """Invalid configuration (bad hyperparameter, missing field, ...)."""


class DataError(ValueError):
    """Malformed or missing input data (CSV parsing, absent files, ...)."""


class TrainingDivergedError(ArithmeticError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch}: loss={loss!r}")


class DegenerateReferenceError(ArithmeticError):
    """Reference predictions have (near-)zero variance for some label."""

    def __init__(self, label: int, variance: float):
        self.label = label
        self.variance = variance
        super().__init__(
            f"reference prediction variance for label {label} is {variance:.3e} "
            "(< 1e-12); sensitivity score is undefined"
        )


class BudgetExceededError(RuntimeError):
    """Exhaustive enumeration would exceed the configured evaluation budget."""

    def __init__(self, size: int, budget: int):
        self.size = size
        self.budget = budget
        super().__init__(
            f"enumeration would need {size} evaluations (budget {budget})"
        )

"""Exception types shared across the package."""


class HeadUQError(Exception):
    """Base class for all package errors."""


class DataFormatError(HeadUQError):
    """A file does not conform to the expected binary/JSON layout."""


class DataValidationError(HeadUQError):
    """File contents parse but violate a dataset invariant."""


class ConfigError(HeadUQError):
    """Invalid configuration value or combination."""


class NumericError(HeadUQError):
    """A computation produced non-finite values."""


class TrainingDivergedError(NumericError):
    """Parameters became non-finite during training.

    Carries the step index and the step size in effect when the
    divergence was detected.
    """

    def __init__(self, step: int, step_size: float):
        self.step = step
        self.step_size = step_size
        super().__init__(
            f"non-finite parameters at step {step} (step size {step_size:.3e})"
        )


class UnbalancedDesignError(HeadUQError):
    """ANOVA requested on a design with unequal cell counts."""

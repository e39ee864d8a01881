"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, shape, or precondition.

    ``violations`` lists every problem found, so callers can report them all
    at once instead of fixing one per run.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NumericalError(FloatingPointError):
    """A loss or gradient became non-finite during training."""


class TrainingAborted(RuntimeError):
    """Raised when a run stops early; ``runlog`` holds the rounds completed so far."""

    def __init__(self, message, runlog):
        super().__init__(message)
        self.runlog = runlog

"""Exception types. The CLI maps DataError to exit code 1 and NumericalError to 2."""


class DataError(ValueError):
    """Invalid input data, design, or configuration."""


class NumericalError(RuntimeError):
    """Optimization diverged, a loss went non-finite, or a matrix was singular.

    ``details`` carries machine-readable context (epoch, batch, iteration,
    observation index) for error payloads.
    """

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

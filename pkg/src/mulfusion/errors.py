class ConfigError(ValueError):
    """Invalid configuration. ``violations`` lists every problem found."""

    def __init__(self, message: str | list[str]):
        self.violations = [message] if isinstance(message, str) else list(message)
        super().__init__("; ".join(self.violations))


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration: int, loss: float, context: str = ""):
        self.iteration = iteration
        self.loss = loss
        msg = f"non-finite loss {loss} at iteration {iteration}"
        super().__init__(f"{msg} ({context})" if context else msg)


class NonFiniteError(ValueError, FloatingPointError):
    """A loss, class-loss matrix or checked objective contains NaN or infinity."""


class DataError(ValueError):
    """Malformed input data."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given inputs."""

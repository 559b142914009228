class InvalidParameterError(ValueError):
    """A model or configuration parameter is outside its admissible range."""


class ConfigError(ValueError):
    """A configuration document failed to parse or validate."""


class SolverInfeasibleError(RuntimeError):
    """The NLP solver detected an infeasible optimal control problem."""

    def __init__(self, message: str, step: int | None = None, result=None):
        super().__init__(message)
        self.step = step
        self.result = result

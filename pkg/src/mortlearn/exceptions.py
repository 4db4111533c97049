"""Exception types shared across the package.

The CLI maps :class:`DataError` to exit code 2 and :class:`ModelError`
to exit code 3.
"""


class DataError(ValueError):
    """Malformed, inconsistent or insufficient input data."""


class ModelError(RuntimeError):
    """A model could not be fitted or evaluated."""


class ConvergenceError(ModelError):
    """An iterative fit hit its iteration cap.

    ``trace`` holds the objective value recorded after each sweep.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []

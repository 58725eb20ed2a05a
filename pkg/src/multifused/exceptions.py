"""Exception hierarchy shared by the solver, data pipeline and CLI."""


class MultifusedError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(MultifusedError, ValueError):
    pass


class IngestError(MultifusedError):
    pass


class EncodingError(MultifusedError):
    pass


class ImputationError(MultifusedError):
    pass


class StepSizeError(MultifusedError):
    """Backtracking hit its shrink cap without meeting sufficient decrease."""

    def __init__(self, message, last_tau):
        super().__init__(message)
        self.last_tau = last_tau


class DivergenceError(MultifusedError):
    pass


class SelectionError(MultifusedError):
    pass


class ImportanceError(MultifusedError):
    pass


class EvaluationError(MultifusedError, ValueError):
    pass

class KpiError(Exception):
    """Base class for all testbed errors."""


class ConfigError(KpiError, ValueError):
    pass


class DomainError(KpiError, ValueError):
    pass


class InsufficientDataError(KpiError, ValueError):
    pass


class NumericError(KpiError, ArithmeticError):
    pass


class PlanningError(KpiError, ValueError):
    pass


class PlanError(KpiError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class OrderingError(KpiError, ValueError):
    pass


class FormatError(KpiError, ValueError):
    pass


class ParseError(FormatError):
    def __init__(self, line: int, field: str, value: str):
        self.line = line
        self.field = field
        self.value = value
        super().__init__(f"line {line}: cannot parse {field}={value!r}")


class TrainingError(KpiError, ValueError):
    pass


class DivergenceError(TrainingError):
    def __init__(self, batch_index: int, loss: float):
        self.batch_index = batch_index
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at batch {batch_index}")


class ShapeError(KpiError, ValueError):
    pass


class StageError(KpiError):
    """Wraps a failure with the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")

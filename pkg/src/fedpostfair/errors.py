"""Exception hierarchy. The CLI maps subclasses of these to exit codes."""


class FedPostFairError(Exception):
    """Base class for all package errors."""


class DataError(FedPostFairError):
    """Problems with input data or configuration (CLI exit code 2)."""


class NumericalError(FedPostFairError):
    """Optimisation or estimation failures (CLI exit code 3)."""


class EmptyDataset(DataError):
    pass


class EmptyGroup(DataError):
    pass


class MissingStatistic(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class SchemaMismatch(DataError):
    pass


class InvalidSpec(DataError):
    pass


class DegeneratePartition(DataError):
    pass


class ParseError(DataError):
    def __init__(self, line: int, column: str, reason: str):
        self.line = line
        self.column = column
        self.reason = reason
        super().__init__(f"line {line}, column {column!r}: {reason}")


class NonFiniteGradient(NumericalError):
    pass


class Divergence(NumericalError):
    pass


class Infeasible(NumericalError):
    pass


class SolverFailure(NumericalError):
    pass

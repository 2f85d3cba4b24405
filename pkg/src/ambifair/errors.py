"""Exception hierarchy shared across the package."""


class AmbifairError(Exception):
    """Base class for all package errors."""


class ContractError(AmbifairError, ValueError):
    """An input violated an operation's precondition (shape, range, type)."""


class ConfigError(AmbifairError, ValueError):
    """A configuration object or file is invalid.

    ``key`` names the offending configuration entry when known.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class IngestError(AmbifairError, ValueError):
    """Raised while reading a CSV file; carries row/column context."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class MissingColumnError(IngestError):
    pass


class NonNumericCellError(IngestError):
    pass


class EmptyFileError(IngestError):
    pass


class MissingValueError(IngestError):
    pass


class ZeroVarianceError(AmbifairError, ValueError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class DivergenceError(AmbifairError, ArithmeticError):
    """The loss became non-finite during training."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class InfeasibleError(AmbifairError):
    """Constrained training failed to reach feasibility.

    The best-effort model and the per-constraint residuals are attached so
    callers can decide whether to keep it.
    """

    def __init__(self, message, model=None, report=None):
        super().__init__(message)
        self.model = model
        self.report = report


class NoEligibleMembersError(AmbifairError):
    """No level-set member has a defined unfairness value on the region."""

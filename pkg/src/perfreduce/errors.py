"""Exception types shared across the package."""


class PerfReduceError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(PerfReduceError):
    """Manifest or CSV header does not match the declared schema."""


class RowError(PerfReduceError):
    """A CSV row violates the record contract (bad numeric, runtime <= 0, ...)."""

    def __init__(self, row_index: int, message: str):
        self.row_index = row_index
        super().__init__(f"row {row_index}: {message}")


class ParameterError(PerfReduceError):
    """An algorithm parameter is out of range (k, eps, fractions, grids)."""


class ContractError(PerfReduceError):
    """An operation was called with inputs that violate its precondition."""


class ModelUnavailableError(PerfReduceError):
    """A model cannot be fit on this training set (e.g. too few machine counts)."""

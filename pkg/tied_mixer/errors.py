"""Exception hierarchy. Every error raised on purpose by the package derives
from ``TiedMixerError``; the CLI maps the three families below to its exit
codes (configuration 2, data 3, everything else 4)."""

from typing import List, Optional, Sequence


class TiedMixerError(Exception):
    pass


class ConfigurationError(TiedMixerError, ValueError):
    """Invalid configuration, manifest entry or split. ``field`` names the
    offending setting when there is one."""

    def __init__(self, message: str, field: Optional[str] = None):
        if field is not None and field not in message:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class DataError(TiedMixerError, ValueError):
    pass


class IngestError(DataError):
    """A CSV file could not be turned into a numeric matrix.

    >>> str(IngestError("cannot parse 'abc' as a number", path="x.csv", row=5, column="b"))
    "x.csv: row 5, column 'b': cannot parse 'abc' as a number"
    """

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        row: Optional[int] = None,
        column: Optional[str] = None,
    ):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column {column!r}")
        prefix = ", ".join(location)
        if prefix:
            message = f"{prefix}: {message}"
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path
        self.row = row
        self.column = column


class InputError(DataError):
    pass


class ContractError(TiedMixerError, ValueError):
    pass


class DimensionError(ContractError):
    """Shapes that cannot be combined.

    >>> str(DimensionError("matmul", (2, 3), (4, 5)))
    'matmul: incompatible shapes (2, 3) and (4, 5)'
    """

    def __init__(self, op: str, *shapes: Sequence[int]):
        shown = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")
        self.shapes = [tuple(s) for s in shapes]


class ParameterError(ContractError):
    pass


class TuningError(TiedMixerError, RuntimeError):
    """Fitness evaluation failed during dropout tuning. ``trace`` holds the
    best-fitness trace recorded before the failure."""

    def __init__(self, message: str, hawk: Optional[int] = None, trace=None):
        if hawk is not None:
            message = f"hawk {hawk}: {message}"
        super().__init__(message)
        self.hawk = hawk
        self.trace: List[float] = list(trace or [])


class SearchError(TiedMixerError, RuntimeError):
    def __init__(self, message: str, causes: Sequence[str] = ()):
        if causes:
            message = message + "\n" + "\n".join(f"  - {c}" for c in causes)
        super().__init__(message)
        self.causes = list(causes)

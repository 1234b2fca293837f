"""Exceptions raised by pyfwdrates."""


class FwrError(Exception):
    """Root of all errors raised by this package."""


class ValidationError(FwrError, ValueError):
    """Invalid input; ``field`` names the offending configuration key or argument."""

    def __init__(self, message: str, field: str = ""):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class ConfigError(ValidationError):
    """One or more configuration problems, each a ``(field, message)`` pair."""

    def __init__(self, problems: list):
        self.problems = list(problems)
        text = "; ".join(f"{f}: {m}" if f else m for f, m in self.problems)
        super().__init__(text)


class GridRangeError(FwrError, IndexError):
    pass


class GridTooCoarseError(ValidationError):
    """Transition probabilities within one grid step exceed one."""


class EmptyCellError(FwrError, LookupError):
    def __init__(self, label):
        self.label = label
        super().__init__(f"no path in conditioning cell {label!r}")


class InconsistentEnsembleError(FwrError):
    """Transition mass at a cell where the occupation denominator vanishes."""


class LumpSumAtExerciseError(ValidationError):
    def __init__(self, path_index: int, grid_index: int):
        self.path_index = path_index
        self.grid_index = grid_index
        super().__init__(f"path {path_index} exercises at grid index {grid_index} where a premium-state atom is paid",
                         field="free_policy")


class MissingRatesError(ValidationError):
    pass


class StageArtifactError(FwrError, FileNotFoundError):
    pass

from typing import Optional


class DriftGuardError(Exception):
    """Base error. `exit_code` is what the CLI returns when this escapes a command."""

    exit_code = 3

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(DriftGuardError):
    exit_code = 1


class DataError(DriftGuardError):
    exit_code = 2


class NumericalError(DriftGuardError):
    exit_code = 3


class ShapeError(NumericalError, ValueError):
    pass


class SubspaceError(ConfigError, ValueError):
    pass


class NoDriftError(NumericalError):
    pass


class RankDeficiencyError(NumericalError):
    def __init__(self, requested: int, attained_rank: int):
        super().__init__(f"Requested rank {requested} but the difference cloud only attains rank {attained_rank}")
        self.requested = requested
        self.attained_rank = attained_rank


class DivergenceError(NumericalError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"Training diverged at epoch {epoch}: objective is {value}")
        self.epoch = epoch
        self.value = value


class CountMismatchError(DataError):
    def __init__(self, dataset: str, expected: tuple, found: tuple):
        super().__init__(f"{dataset}: expected split counts {expected}, found {found}")
        self.dataset = dataset
        self.expected = expected
        self.found = found


class CellFailure(DriftGuardError):
    def __init__(self, cell_id: str, cause: Optional[BaseException] = None):
        reason = f"{type(cause).__name__}: {cause}" if cause else "unknown failure"
        super().__init__(f"Cell {cell_id} failed ({reason})")
        self.cell_id = cell_id
        # Surface the original category so the CLI exit code stays meaningful.
        if isinstance(cause, DriftGuardError):
            self.exit_code = cause.exit_code

    def __reduce__(self):
        # Worker processes pickle failures; keep the id and exit code across the boundary.
        return (_rebuild_cell_failure, (self.cell_id, self.detail, self.exit_code))


def _rebuild_cell_failure(cell_id: str, detail: str, exit_code: int) -> CellFailure:
    failure = CellFailure.__new__(CellFailure)
    DriftGuardError.__init__(failure, detail)
    failure.cell_id = cell_id
    failure.exit_code = exit_code
    return failure

"""Exception types shared across the simulator."""


class InputError(ValueError):
    """An operation received arguments that violate its preconditions."""


class ConfigError(ValueError):
    """An experiment or dataset configuration is inconsistent."""


class IngestionError(ValueError):
    """A dataset file could not be parsed.

    ``line`` is the 1-based line number in the file when the problem is
    tied to a specific row, otherwise ``None``.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class TrainingDivergedError(RuntimeError):
    """Raised when a loss becomes non-finite during gradient descent."""

    def __init__(self, message, step=None, loss=None):
        self.step = step
        self.loss = loss
        super().__init__(message)


class ExperimentError(RuntimeError):
    """A run aborted mid-way; carries the failing round and snapshot path."""

    def __init__(self, message, round_index, snapshot_path=None):
        self.round_index = round_index
        self.snapshot_path = snapshot_path
        super().__init__(f"round {round_index}: {message}")

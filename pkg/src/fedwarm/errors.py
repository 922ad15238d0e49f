"""Exception types shared across the simulator."""

from __future__ import annotations


class SimulatorError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(SimulatorError):
    """Tensor or layer shapes do not compose."""


class ConfigError(SimulatorError):
    """Invalid hyperparameter, model spec, or experiment setting."""


class ContractError(SimulatorError):
    """A caller violated a documented precondition."""


class IdxFormatError(SimulatorError):
    """IDX file has a bad magic number or malformed header."""


class IdxConsistencyError(SimulatorError):
    """IDX image and label files disagree with each other."""


class DataError(SimulatorError):
    """Dataset contents violate their own invariants."""


class PartitionError(SimulatorError):
    """A client partition could not be built from the dataset."""


class AggregationError(SimulatorError):
    """Client updates cannot be averaged together."""


class RoundError(SimulatorError):
    """A federated round failed; carries the 1-based round index."""

    def __init__(self, round_index: int, cause: Exception):
        super().__init__(f"round {round_index} failed: {cause}")
        self.round_index = round_index
        self.__cause__ = cause


class ConfigParseError(ConfigError):
    """Experiment config file rejected; carries a line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CsvSchemaError(SimulatorError):
    """Round-log CSV does not match the expected schema."""

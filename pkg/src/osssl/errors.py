"""Exception hierarchy for the engine.

The CLI maps these onto exit codes: ConfigError -> 2, DataError and its
subclasses -> 3, every other EngineError -> 4.
"""


class EngineError(Exception):
    """Base class for every error the engine raises on purpose."""


class ConfigError(EngineError):
    pass


class DataError(EngineError):
    pass


class ZeroVector(EngineError):
    pass


class DimensionMismatch(EngineError):
    pass


class InfeasibleSpec(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class SchemaError(DataError):
    def __init__(self, message: str, missing: list[str] | None = None):
        super().__init__(message)
        self.missing = missing or []


class InvariantViolation(DataError):
    pass


class TooFewPoints(EngineError):
    pass


class NotEnoughWarmupSamples(EngineError):
    def __init__(self, class_index: int, have: int, need: int):
        super().__init__(
            f"class {class_index} has {have} warm-up samples, needs {need}"
        )
        self.class_index = class_index


class BankAlreadyInitialized(EngineError):
    pass


class BankNotInitialized(EngineError):
    pass


class BankNotFlagged(EngineError):
    pass


class EmptyClass(EngineError):
    pass


class InvalidNid(EngineError):
    pass


class LevelOutOfRange(EngineError):
    pass


class EmptyPyramidLevel(EngineError):
    pass


class EmptyTestSet(EngineError):
    pass


class SingleClassInput(EngineError):
    pass


class CorruptCheckpoint(EngineError):
    pass


class VersionMismatch(EngineError):
    pass

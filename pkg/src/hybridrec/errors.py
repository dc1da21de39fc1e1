"""Exception hierarchy.

Every error carries a short ``kind`` (the class name) so the CLI can print a
single machine-parsable line, and an ``exit_code`` grouping it as a config
(2), data (3) or model (4) failure.
"""


class HybridRecError(Exception):
    exit_code = 1

    @property
    def kind(self) -> str:
        return type(self).__name__


class ConfigError(HybridRecError):
    exit_code = 2


class DataError(HybridRecError):
    exit_code = 3


class ModelError(HybridRecError):
    exit_code = 4


class FileMissing(DataError):
    pass


class SchemaError(DataError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        super().__init__(message)
        self.line = line
        self.field = field


class InvalidDataset(DataError):
    pass


class UnknownUser(DataError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return str(self.args[0]) if self.args else ""


class UnknownItem(DataError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class DimMismatch(DataError, ValueError):
    pass


class EmptyCorpus(DataError):
    pass


class MissingEmbedding(DataError):
    pass


class InsufficientData(DataError):
    pass


class NoClickData(DataError):
    pass


class ListTooShort(DataError, ValueError):
    pass


class EmptyRelevantSet(DataError, ValueError):
    pass


class DomainError(ModelError, ValueError):
    pass


class WrongStrategy(ModelError):
    pass


class GradientCheckFailed(ModelError):
    pass


class MissingArtifact(ModelError):
    pass


class HashMismatch(ModelError):
    pass


class CorruptArtifact(ModelError):
    pass

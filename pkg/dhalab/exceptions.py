"""Error hierarchy shared by every dhalab app."""
from django.core.exceptions import ImproperlyConfigured


class DHAError(Exception):
    """Root of every error raised by the search library."""


# autodiff

class ShapeError(DHAError, ValueError):
    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = shapes
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        message = f"{op}: incompatible shapes {rendered}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class GraphError(DHAError, RuntimeError):
    pass


# augment

class UnknownTransformError(DHAError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown transform"


class PolicyUpdateError(DHAError, ValueError):
    pass


# hpo

class NonFiniteGradientError(DHAError, FloatingPointError):
    def __init__(self, what, iteration=None):
        self.what = what
        self.iteration = iteration
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"non-finite {what}{where}")


# nas

class MeasurementError(DHAError, ValueError):
    pass


class IstaDivergenceError(DHAError, FloatingPointError):
    def __init__(self, iteration):
        self.iteration = iteration
        super().__init__(f"ISTA produced a non-finite iterate at iteration {iteration}")


class ConstraintError(DHAError, ValueError):
    pass


# dataio

class DatasetError(DHAError, ValueError):
    pass


class IdxMagicError(DatasetError):
    pass


class IdxTruncatedError(DatasetError):
    pass


class IdxCountMismatchError(DatasetError):
    pass


class CsvFormatError(DatasetError):
    pass


class BatchSpecError(DatasetError):
    pass


# scheduler

class TrainingDivergedError(DHAError, FloatingPointError):
    def __init__(self, iteration, what, dump_path=None):
        self.iteration = iteration
        self.what = what
        self.dump_path = dump_path
        message = f"non-finite {what} at iteration {iteration}"
        if dump_path is not None:
            message = f"{message}; state dumped to {dump_path}"
        super().__init__(message)


class BatchDisciplineError(DHAError, AssertionError):
    pass


# experiments

class ConfigError(DHAError, ImproperlyConfigured):
    def __init__(self, key, message, line=None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{key}{where}: {message}")


class CheckpointError(DHAError, ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class ArtifactWriteError(DHAError, OSError):
    pass

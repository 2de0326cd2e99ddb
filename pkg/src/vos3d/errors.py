class Vos3dError(Exception):
    """Base class for all errors raised by this package."""

    kind = "Error"


class InvalidArgumentError(Vos3dError, ValueError):
    kind = "InvalidArgument"


class ShapeError(Vos3dError, ValueError):
    kind = "Shape"


class ConfigError(Vos3dError, ValueError):
    kind = "Config"


class TrainingError(Vos3dError, RuntimeError):
    kind = "Training"


class CheckpointError(Vos3dError, RuntimeError):
    kind = "Checkpoint"


class BenchError(Vos3dError, RuntimeError):
    kind = "Bench"


class DatasetError(Vos3dError, FileNotFoundError):
    kind = "Dataset"

"""Exception hierarchy shared by the services and the command modules."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


class TireForceError(Exception):
    """Base class for every error the pipeline reports to the user"""

    exit_code = EXIT_DATA


class ConfigError(TireForceError):
    """Invalid or unknown configuration value"""

    exit_code = EXIT_CONFIG


class DataError(TireForceError):
    """Bad input data, missing files or unwritable outputs"""

    exit_code = EXIT_DATA


class RejectedInputError(DataError):
    pass


class UnphysicalLoadError(DataError):
    pass


class CorruptStreamError(DataError):
    pass


class PatchNotFoundError(DataError):
    pass


class RejectedTraceError(DataError):
    pass


class DegenerateChannelError(DataError):
    pass


class UndefinedNormalizerError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class TrainingDivergedError(TireForceError):
    """Loss became NaN or infinite during training"""

    exit_code = EXIT_DIVERGED

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")

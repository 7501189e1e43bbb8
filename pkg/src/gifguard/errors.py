# file: errors.py


class GifGuardError(Exception):
    """Base class for every error raised by gifguard."""


class GifParseError(GifGuardError):
    """A GIF file could not be parsed; `block` names the offending block."""

    def __init__(self, block: str, message: str):
        self.block = block
        super().__init__(f"{block}: {message}")


class GifFormatError(GifGuardError, ValueError):
    """A clip cannot be stored in a GIF89a file as given."""


class LZWError(GifGuardError):
    pass


class ClipError(GifGuardError):
    pass


class DatasetError(GifGuardError):
    pass


class ConfigError(GifGuardError):
    pass


class CheckpointError(GifGuardError):
    pass


class UnknownDistortion(GifGuardError, ValueError):
    pass


class ReprofileRequired(GifGuardError, ValueError):
    pass


class SurrogateUnavailable(GifGuardError):
    pass


class NonFiniteLoss(GifGuardError):
    """Raised by the training loop; `record` is the TrainLog row of the failing step."""

    def __init__(self, record: dict):
        self.record = record
        super().__init__(f"non-finite loss at epoch {record.get('epoch')} step {record.get('step')}")

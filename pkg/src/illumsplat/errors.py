"""Exception types raised across the package."""


class InvalidFieldError(ValueError):
    """Illumination field with a degenerate box or malformed factors."""


class InvalidParameterError(ValueError):
    """A Gaussian parameter that cannot be turned into geometry (e.g. zero quaternion)."""


class InvalidInputError(ValueError):
    """Shape or value mismatch at a function boundary."""


class CheckpointFormatError(ValueError):
    pass


class CheckpointTruncatedError(CheckpointFormatError):
    def __init__(self, offset, needed, available):
        super().__init__(
            f"checkpoint truncated at byte offset {offset}: "
            f"need {needed} bytes, {available} available"
        )
        self.offset = offset


class DatasetError(RuntimeError):
    """Raised by the dataset loaders; message always names the offending path."""


class NumericalError(RuntimeError):
    def __init__(self, message, view_id=None):
        super().__init__(message)
        self.view_id = view_id

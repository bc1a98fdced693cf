"""
Exception hierarchy for the SELD toolkit.

Every error carries the process exit code the CLI reports for it:
1 for validation problems, 2 for I/O problems.
"""

from typing import Optional


class SeldError(Exception):
    """Base class for all toolkit errors"""

    exit_code: int = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigurationError(SeldError):
    """Invalid or unknown configuration values"""


class LabelParseError(SeldError):
    """Malformed row in a label CSV"""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class LabelRangeError(SeldError):
    """Class or frame index outside the class map or frame grid"""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class AnnotationError(SeldError):
    """Event annotation violates its invariants"""


class AudioFormatError(SeldError):
    """Audio has the wrong channel count, sample rate or length"""


class ShapeMismatchError(SeldError):
    """Array shapes are inconsistent with each other or with a format"""


class PolyphonyError(SeldError):
    """More simultaneous same-class events than a format can encode"""

    def __init__(self, class_id: int, frame: int, count: int, limit: int):
        super().__init__(
            f"class {class_id} has {count} events at frame {frame}; format allows {limit}"
        )
        self.class_id = class_id
        self.frame = frame


class FormatMismatchError(SeldError):
    """Output format does not fit the requested operation or loss weights"""


class SceneSpecError(SeldError):
    """Scene specification cannot be rendered"""


class CheckpointError(SeldError):
    """Checkpoint file is unreadable or incompatible"""


class ModelStateError(SeldError):
    """Model operation called in the wrong state (e.g. backward before forward)"""


class TrainingDivergedError(SeldError):
    """Loss became non-finite during training"""

    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step


class StorageError(SeldError):
    """Reading or writing a file failed"""

    exit_code = 2

    def __init__(self, message: str, path: str):
        super().__init__(f"{message}: {path}")
        self.path = path

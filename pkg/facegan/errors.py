"""
Exception types raised across the toolkit
"""


class FaceganError(Exception):
    """Base class for every error the toolkit raises on purpose"""


class ConfigError(FaceganError):
    """Invalid experiment config or command-line input"""


class FrameStoreError(FaceganError):
    """A frame directory cannot be used as a domain"""


class CropError(FaceganError):
    """A crop rectangle does not fit the frame"""


class NetSpecError(FaceganError):
    """Malformed or unrealizable network description"""


class ProbeError(FaceganError):
    """Empirical receptive-field probe cannot run on the given input"""


class NonFiniteLossError(FaceganError):
    """A loss or parameter became NaN or infinite"""

    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


class CheckpointError(FaceganError):
    """Checkpoint file cannot be written, read or matched to a config"""

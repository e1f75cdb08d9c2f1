"""Exception types raised across the pipeline.

Every error carries the name of the module that raised it so the CLI can
report ``module`` and ``cause`` on a single line.
"""


class GaitError(Exception):
    module = "gaitrecon"

    def __init__(self, message="", module=None):
        super().__init__(message)
        if module is not None:
            self.module = module


class EmptyFrame(GaitError, ValueError):
    module = "silhouette"


class MissingPath(GaitError, FileNotFoundError):
    module = "silhouette"


class UnreadableImage(GaitError, OSError):
    module = "silhouette"


class GeometryMismatch(GaitError, ValueError):
    module = "silhouette"


class DimTooLarge(GaitError, ValueError):
    module = "keypose"


class InsufficientData(GaitError, ValueError):
    module = "keypose"


class DegreeOutOfRange(GaitError, ValueError):
    module = "occlusion"


class LengthMismatch(GaitError, ValueError):
    module = "occlusion"


class InvalidState(GaitError, ValueError):
    module = "cvae"


class DimensionMismatch(GaitError, ValueError):
    module = "cvae"


class EmptyCorpus(GaitError, ValueError):
    module = "training"


class SequenceTooShort(GaitError, ValueError):
    module = "temporal_filter"


class AllFramesOccluded(GaitError, ValueError):
    module = "temporal_filter"


class EmptySequence(GaitError, ValueError):
    module = "recognizer"


class SingleClass(GaitError, ValueError):
    module = "recognizer"


class EmptyGallery(GaitError, ValueError):
    module = "recognizer"


class EmptyRecords(GaitError, ValueError):
    module = "evaluation"


class InsufficientPerClass(GaitError, ValueError):
    module = "evaluation"


class CheckpointError(GaitError, ValueError):
    module = "checkpoint"


class UnknownCommand(GaitError):
    module = "cli"

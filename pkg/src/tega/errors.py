"""Exception hierarchy shared by every pipeline stage."""

from __future__ import annotations


class TegaError(Exception):
    """Base class; ``stage`` names the pipeline stage that failed, if known."""

    stage: str | None = None

    def __init__(self, message: str = "", *, stage: str | None = None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage


# geometry
class EmptyCloud(TegaError):
    stage = "geometry"


class DegenerateCloud(TegaError):
    stage = "geometry"


class TooFewPoints(TegaError):
    stage = "geometry"


class MissingNormals(TegaError):
    stage = "meshing"


class NoTriangles(TegaError):
    stage = "meshing"


class InvalidGeometry(TegaError):
    """A PointCloud / TriangleMesh invariant does not hold."""


class FormatError(TegaError):
    """A binary payload (point cloud, PPM, checkpoint) failed to parse."""


# renderer
class InvalidCount(TegaError):
    stage = "render"


class EmptyMesh(TegaError):
    stage = "render"


class RenderFailed(TegaError):
    stage = "render"

    def __init__(self, message: str = "", *, view_index: int | None = None):
        super().__init__(message)
        self.view_index = view_index


# generation
class GenerationFailed(TegaError):
    stage = "generation"


class UnknownPrompt(TegaError):
    stage = "generation"


class BackendUnreachable(TegaError):
    """A remote backend did not answer within the retry budget."""


# filtering
class MissingViews(TegaError):
    stage = "caption"


class CaptionFailed(TegaError):
    stage = "caption"


class MergeFailed(TegaError):
    stage = "merge"


class JudgeFailed(TegaError):
    stage = "judge"


class JudgeProtocolError(TegaError):
    stage = "judge"


# datasets
class SchemaViolation(TegaError):
    def __init__(self, message: str, *, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class ParseError(TegaError):
    pass


class InsufficientSynthetic(TegaError):
    pass


class VocabularyMismatch(TegaError):
    pass


class EmptyDataset(TegaError):
    pass


# training / evaluation
class NonPositiveTemperature(TegaError):
    pass


class CheckpointMismatch(TegaError):
    pass


class EmptyVocabulary(TegaError):
    pass

"""Exception hierarchy shared by every module."""


class TryonLabError(Exception):
    """Base class; ``code`` is what the CLI reports in its error JSON."""

    code = "TryonLabError"

    def __init__(self, message="", **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        return {"error": self.code, "message": str(self), **{k: str(v) for k, v in self.details.items()}}


class ShapeMismatch(TryonLabError, ValueError):
    code = "ShapeMismatch"


class DatasetError(TryonLabError):
    code = "DatasetError"


class MissingAnnotation(DatasetError):
    code = "MissingAnnotation"

    def __init__(self, video_id, kind, message=None):
        super().__init__(message or f"video {video_id!r} is missing {kind}", video_id=video_id, kind=kind)
        self.video_id = video_id
        self.kind = kind


class EmptyDataset(DatasetError):
    code = "EmptyDataset"


class CorruptImage(DatasetError):
    code = "CorruptImage"

    def __init__(self, path, message=None):
        super().__init__(message or f"cannot decode image {path}", path=path)
        self.path = path


class IndexOutOfRange(DatasetError, IndexError):
    code = "IndexOutOfRange"


class IoFailure(TryonLabError, OSError):
    code = "IoFailure"


class PartIndexOutOfRange(TryonLabError, ValueError):
    code = "PartIndexOutOfRange"


class AnnotationUnavailable(TryonLabError):
    code = "AnnotationUnavailable"

    def __init__(self, mode, message=None):
        super().__init__(message or f"sample has no annotation for pose mode {mode!r}", mode=mode)
        self.mode = mode


class DegenerateTps(TryonLabError, ValueError):
    code = "DegenerateTps"


class ConfigInvalid(TryonLabError, ValueError):
    code = "ConfigInvalid"


class UnknownActivation(ConfigInvalid):
    code = "UnknownActivation"


class ImageTooSmall(TryonLabError, ValueError):
    code = "ImageTooSmall"


class EmptyInput(TryonLabError, ValueError):
    code = "EmptyInput"


class NanLoss(TryonLabError, FloatingPointError):
    code = "NanLoss"


class LayoutMismatch(TryonLabError, ValueError):
    code = "LayoutMismatch"

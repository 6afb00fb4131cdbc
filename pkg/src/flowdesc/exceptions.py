from typing import List, Optional


class FlowdescError(Exception):
    pass


class ConfigError(FlowdescError, ValueError):
    def __init__(self, message: str, field_errors: Optional[List[str]] = None) -> None:
        self.field_errors = field_errors or []
        details = "\n".join(f"  {line}" for line in self.field_errors)
        super().__init__(message + ("\n" + details if details else ""))


class DegenerateTransformError(FlowdescError, ValueError):
    pass


class ObjectOutOfFrameError(FlowdescError, ValueError):
    pass


class EmptyMaskError(FlowdescError, ValueError):
    pass


class MaskShapeError(FlowdescError, ValueError):
    pass


class FormatError(FlowdescError, ValueError):
    pass


class FlowFileError(FlowdescError, FileNotFoundError):
    pass


class GeometryError(FlowdescError, ValueError):
    pass


class NoCorrespondenceError(FlowdescError, ValueError):
    pass


class NegativeSamplingError(FlowdescError, ValueError):
    pass


class ConfigMismatchError(FlowdescError, ValueError):
    pass


class TrainingError(FlowdescError, RuntimeError):
    pass


class EvaluationError(FlowdescError, RuntimeError):
    pass

class EndoRenderError(Exception):
    """Base class for all package errors."""


class InvalidDepthError(EndoRenderError, ValueError):
    pass


class DegenerateGeometryError(EndoRenderError, ValueError):
    pass


class EmptySceneError(EndoRenderError, ValueError):
    pass


class ConfigError(EndoRenderError, ValueError):
    pass


class DatasetError(EndoRenderError):
    pass


class CheckpointError(EndoRenderError):
    pass


class NumericError(EndoRenderError, FloatingPointError):
    pass

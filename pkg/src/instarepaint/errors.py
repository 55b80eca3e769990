"""Exception hierarchy shared across the package."""


class RepaintError(Exception):
    """Base class for all errors raised by instarepaint."""


class DatasetParseError(RepaintError):
    """An annotation file is malformed; the message names the offending record."""


class DatasetLoadError(RepaintError):
    """Files referenced by a dataset could not be read."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class EmptyMaskError(RepaintError, ValueError):
    pass


class DimensionError(RepaintError, ValueError):
    pass


class ManifestFormatError(RepaintError):
    """Manifest file has an unsupported schema version or bad structure."""


class AnalysisError(RepaintError):
    def __init__(self, message, backend=None, image_id=None):
        super().__init__(message)
        self.backend = backend
        self.image_id = image_id


class PreconditionError(RepaintError, ValueError):
    pass


class AssemblyError(RepaintError):
    pass


class GenerationError(RepaintError):
    """Generation failed for an image; ``partial`` holds entries produced before the failure."""

    def __init__(self, message, partial=(), step=None):
        super().__init__(message)
        self.partial = list(partial)
        self.step = step


class BackendError(RepaintError):
    pass


class BackendUnavailableError(BackendError):
    """Transport retries were exhausted."""


class ProtocolError(BackendError):
    """The remote endpoint answered with a body that violates the wire protocol."""


class RemoteContentError(BackendError):
    """The remote endpoint answered with a typed error object."""

    def __init__(self, message, error_type=None):
        super().__init__(message)
        self.error_type = error_type


class ResumeError(RepaintError):
    pass


class ConfigError(RepaintError):
    pass

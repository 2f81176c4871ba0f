"""Exception types shared across the package."""


class SceneLocError(Exception):
    """Base class for all errors raised by this package."""


class CatalogError(SceneLocError):
    """Malformed scene catalog text."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FeatureFormatError(SceneLocError):
    """Corrupt or incompatible feature file."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SceneLookupError(SceneLocError):
    """A scene required by the pipeline is absent from a feature source."""


class SplitError(SceneLocError):
    """A dataset cannot be split as requested."""


class SamplingError(SceneLocError):
    """The balanced sampler cannot draw from the given dataset."""


class DivergenceError(SceneLocError):
    """Training produced a non-finite gradient."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class RunMatrixError(SceneLocError):
    """An accuracy run matrix is incomplete or malformed."""

    def __init__(self, message: str, missing: list[str] | None = None):
        super().__init__(message)
        self.missing = missing or []

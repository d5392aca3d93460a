class ThemeDetectionError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(ThemeDetectionError):
    """Configuration is missing or invalid."""


class DataError(ThemeDetectionError):
    """Input data or a stored artifact is malformed."""


class StageError(ThemeDetectionError):
    """A pipeline stage failed. Wraps the original cause."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause

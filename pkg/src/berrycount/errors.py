"""Exception hierarchy shared by the library and the CLI.

The CLI maps each family onto a distinct exit code (see ``cli.EXIT_CODES``).
"""


class BerryCountError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BerryCountError, ValueError):
    """Invalid parameter or configuration value."""


class ValidationError(BerryCountError, ValueError):
    """Input data violates a declared invariant."""


class AnnotationError(ValidationError):
    """A color annotation image contains a pixel outside the palette."""

    def __init__(self, message: str, pixel: tuple[int, int] | None = None):
        super().__init__(message)
        self.pixel = pixel


class GenerationError(BerryCountError, RuntimeError):
    """Synthetic scene placement failed after the allowed number of retries."""


class UndefinedFitError(BerryCountError, ValueError):
    """Least-squares fit requested on degenerate input."""

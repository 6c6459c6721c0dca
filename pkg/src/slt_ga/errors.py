"""Exception hierarchy shared by all modules."""


class SltError(Exception):
    """Base class for every error raised by this package."""


class ArchitectureError(SltError):
    pass


class ConfigError(SltError):
    pass


class ShapeError(SltError):
    pass


class EmptyDataError(SltError):
    pass


class FormatError(SltError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericsError(SltError):
    def __init__(self, message: str, epoch: int | None = None):
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
        self.epoch = epoch


class StatError(SltError):
    pass
